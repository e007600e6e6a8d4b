"""
Modelos de configuração (pydantic) e configurações de ambiente.
"""
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app.errors import ConfigError

logger = logging.getLogger(__name__)


# --- Estimador e solver ---

class EstimatorConfig(BaseModel):
    backend: Literal["li", "spline", "gp"] = Field("spline", description="Representação contínua: li, spline ou gp")
    knot_hz: float = Field(10.0, gt=0, description="Frequência de knots (spline) ou de poses (li), em Hz")
    order: int = Field(4, ge=2, description="Ordem k do spline estimado")
    uniform: bool = Field(True, description="Knots uniformes")
    knots: Optional[List[float]] = Field(None, description="Lista explícita de knots (spline não uniforme)")
    prior: Literal["wnoa", "wnoj"] = Field("wnoj", description="Prior do GP: wnoa (velocidade constante) ou wnoj (aceleração constante)")
    state_hz: float = Field(10.0, gt=0, description="Frequência dos estados de suporte do GP, em Hz")
    qc: List[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0], description="Diagonal de Q_C (x, y, theta)")
    sigma_floor: float = Field(1e-3, gt=0, description="Desvio padrão mínimo usado nos fatores quando o ruído configurado é zero")
    sensors: List[Literal["gyro", "accel", "rb"]] = Field(
        default_factory=lambda: ["gyro", "accel", "rb"],
        description="Sensores que entram no grafo; medidas de outros tipos são ignoradas")

    @field_validator("qc")
    @classmethod
    def qc_positive(cls, v):
        if not v or any(q <= 0 for q in v):
            raise ValueError("qc precisa ter entradas > 0")
        return v

    @field_validator("sensors")
    @classmethod
    def sensors_distinct(cls, v):
        if not v or len(set(v)) != len(v):
            raise ValueError("sensors precisa listar pelo menos um sensor, sem repetição")
        return v


class SolverConfig(BaseModel):
    max_iter: int = Field(50, ge=1, description="Máximo de iterações")
    cost_tol: float = Field(1e-10, ge=0, description="Tolerância de variação relativa do custo")
    step_tol: float = Field(1e-10, ge=0, description="Tolerância da norma do passo")
    grad_tol: float = Field(1e-10, ge=0, description="Tolerância de norma infinito do gradiente")
    lm_lambda0: float = Field(1e-4, gt=0, description="Amortecimento inicial após a primeira rejeição")
    lm_scale: float = Field(10.0, gt=1, description="Fator de aumento/redução do amortecimento")
    lm_lambda_max: float = Field(1e12, gt=0, description="Amortecimento acima do qual o solver desiste")
    threads: int = Field(1, ge=1, description="Threads para linearização dos fatores")


class SolveReport(BaseModel):
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    reason: str = ""
    cost_trace: List[float] = Field(default_factory=list)
    wall_time_s: float = 0.0
    lm_lambda: float = 0.0


# --- Cenário ---

class ScenarioConfig(BaseModel):
    duration: float = Field(60.0, gt=0, description="Duração do cenário em segundos")
    seed: int = Field(..., ge=0, lt=2 ** 64, description="Semente obrigatória (64 bits)")
    landmark_count: int = Field(20, ge=0, description="Número de landmarks")
    field_extent: float = Field(40.0, gt=0, description="Lado do campo quadrado de landmarks, em metros")
    visible_range: float = Field(30.0, gt=0, description="Alcance máximo do range-bearing, em metros")
    gyro_rate: float = Field(200.0, gt=0, description="Hz")
    accel_rate: float = Field(200.0, gt=0, description="Hz")
    rb_rate: float = Field(10.0, gt=0, description="Hz")
    sigma_gyro: float = Field(0.01, ge=0, description="rad/s")
    sigma_accel: float = Field(0.05, ge=0, description="m/s²")
    sigma_range: float = Field(0.1, ge=0, description="m")
    sigma_bearing: float = Field(0.01, ge=0, description="rad")
    initial_sigma_pose: List[float] = Field(default_factory=lambda: [0.05, 0.05, 0.01],
                                            description="Desvio do prior inicial de pose (x, y, theta)")
    initial_sigma_velocity: List[float] = Field(default_factory=lambda: [0.05, 0.05, 0.01],
                                                description="Desvio do prior inicial de velocidade (vx, vy, omega)")
    truth_order: int = Field(6, ge=2, description="Ordem do spline verdade")
    truth_knot_hz: float = Field(1.0, gt=0, description="Frequência de knots do spline verdade")
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)

    @field_validator("initial_sigma_pose", "initial_sigma_velocity")
    @classmethod
    def three_sigmas(cls, v):
        if len(v) != 3 or any(s < 0 for s in v):
            raise ValueError("precisa de 3 desvios >= 0")
        return v

    @model_validator(mode="after")
    def duration_covers_knots(self):
        for name, hz in (("truth_knot_hz", self.truth_knot_hz),
                         ("estimator.knot_hz", self.estimator.knot_hz),
                         ("estimator.state_hz", self.estimator.state_hz)):
            if self.duration <= 2.0 / hz:
                raise ValueError(f"duration precisa ser maior que 2/{name} ({2.0 / hz} s)")
        return self


class RunManifest(BaseModel):
    command: str
    version: str
    seed: Optional[int] = None
    backend: Optional[str] = None
    config: Dict[str, Any] = Field(default_factory=dict)
    initial_prior: Optional[Dict[str, Any]] = None
    query_hz: Optional[float] = None
    metrics: Dict[str, Any] = Field(default_factory=dict)
    timings: Dict[str, float] = Field(default_factory=dict)
    solve_report: Optional[SolveReport] = None
    error: Optional[Dict[str, Any]] = None


def _field_from_error(err: ValidationError) -> str:
    first = err.errors()[0]
    loc = ".".join(str(p) for p in first.get("loc", ()))
    if loc:
        return loc
    # erros de model_validator não têm loc; o nome do campo vai na mensagem
    msg = first.get("msg", "")
    for token in msg.replace("/", " ").replace("(", " ").split():
        if token in ScenarioConfig.model_fields or token.startswith("estimator."):
            return token
    return "duration" if "duration" in msg else ""


def parse_scenario_config(data: Dict[str, Any]) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        field = _field_from_error(e)
        first = e.errors()[0]
        raise ConfigError(f"Configuração inválida em '{field}': {first.get('msg')}", field=field)


def load_scenario_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"Arquivo de configuração não encontrado: {path}", field="config")
    except json.JSONDecodeError as e:
        raise ConfigError(f"JSON inválido em {path}: {e}", field="config")
    if not isinstance(data, dict):
        raise ConfigError(f"Configuração precisa ser um objeto JSON: {path}", field="config")
    return parse_scenario_config(data)


# --- Ambiente (serviço HTTP) ---

class Settings(BaseModel):
    data_dir: Path = Path("./runs")
    log_level: str = "INFO"


def load_settings() -> Settings:
    """
    Lê CTESTIM_DATA_DIR e CTESTIM_LOG_LEVEL do ambiente (o .env é carregado em app/main.py).
    """
    return Settings(
        data_dir=Path(os.getenv("CTESTIM_DATA_DIR", "./runs")),
        log_level=os.getenv("CTESTIM_LOG_LEVEL", "INFO").upper(),
    )
