def small_config_dict(**overrides):
    """
    Cenário curto e com taxas baixas para os testes ponta a ponta.
    """
    data = {
        "duration": 2.5,
        "seed": 7,
        "landmark_count": 8,
        "field_extent": 12.0,
        "visible_range": 30.0,
        "gyro_rate": 40.0,
        "accel_rate": 40.0,
        "rb_rate": 10.0,
        "truth_order": 6,
        "truth_knot_hz": 1.0,
        "estimator": {"backend": "spline", "knot_hz": 2.0, "order": 4, "state_hz": 2.0, "prior": "wnoj"},
    }
    estimator = overrides.pop("estimator", None)
    data.update(overrides)
    if estimator:
        data["estimator"] = {**data["estimator"], **estimator}
    return data
