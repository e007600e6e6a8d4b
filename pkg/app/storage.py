"""
Persistência de cenários e estimativas: CSV (pandas) para dados numéricos,
JSON para configurações/manifestos e NPZ para as covariâncias conjuntas do GP.

Floats são escritos com 17 dígitos significativos (ida e volta exata).
"""
import json
import logging
import os
import re
import tempfile
from pathlib import Path
from typing import IO, Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.errors import InvalidArgumentError
from app.factors import Landmark
from app.sim import Measurement, TabulatedTrajectory

logger = logging.getLogger(__name__)

MEASUREMENTS_FILE = "measurements.csv"
TRUTH_FILE = "truth.csv"
LANDMARKS_FILE = "landmarks.csv"
ESTIMATE_FILE = "estimate.csv"
VARIABLES_FILE = "variables.csv"
POSTERIOR_FILE = "posterior.npz"
MANIFEST_FILE = "manifest.json"

MEASUREMENT_HEADER = ("type", "t", "v0", "v1", "landmark_id")
TRUTH_HEADER = ("t", "x", "y", "theta", "vx", "vy", "omega")
LANDMARK_HEADER = ("id", "x", "y")
ESTIMATE_HEADER = ("t", "x", "y", "theta", "sxx", "sxy", "syy", "stt")
VARIABLE_HEADER = ("kind", "index", "t", "x", "y", "theta", "vx", "vy", "omega", "ax", "ay", "alpha")

FLOAT_FORMAT = "%.17g"

_LINE = re.compile(r"line (\d+)")


def write_csv(target: Union[Path, IO[str]], header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    """
    Células None saem vazias; colunas numéricas com None viram float e
    inteiros continuam sem casa decimal ("%.17g").
    """
    frame = pd.DataFrame(list(rows), columns=list(header))
    frame.to_csv(target, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    if isinstance(target, (str, Path)):
        logger.info(f"[STORAGE] {target} ({len(frame)} linhas)")


def read_csv(path: Path, header: Sequence[str]) -> pd.DataFrame:
    """
    Lê a tabela como texto (células vazias = ""), validando cabeçalho e
    número de colunas de cada linha.
    """
    path = Path(path)
    if not path.exists():
        raise InvalidArgumentError(f"Arquivo ausente: {path}")
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise InvalidArgumentError(f"Arquivo vazio: {path}")
    except pd.errors.ParserError as e:
        match = _LINE.search(str(e))
        where = f"{path}:{match.group(1)}" if match else str(path)
        raise InvalidArgumentError(f"{where}: número de colunas diferente de {len(header)} ({str(e).strip()})")
    found = tuple(raw.iloc[0])
    if found != tuple(header):
        raise InvalidArgumentError(f"Cabeçalho inesperado em {path}: {','.join(map(str, found))} (esperado {','.join(header)})")
    short = raw.isna().any(axis=1).to_numpy().nonzero()[0]
    if len(short):
        raise InvalidArgumentError(f"{path}:{short[0] + 1}: colunas faltando, esperado {len(header)}")
    table = raw.iloc[1:].reset_index(drop=True)
    table.columns = list(header)
    return table


def _floats(column: pd.Series) -> np.ndarray:
    return column.astype(float).to_numpy()


def _optional_float(text: str) -> Optional[float]:
    return float(text) if text != "" else None


def write_json_atomic(path: Path, data: Dict[str, Any]) -> None:
    """
    Escreve em arquivo temporário no mesmo diretório e troca com os.replace.
    """
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info(f"[STORAGE] {path}")


def read_json(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise InvalidArgumentError(f"Arquivo ausente: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise InvalidArgumentError(f"JSON inválido em {path}: {e}")


# --- Cenário ---

def measurement_row(m: Measurement) -> tuple:
    v1 = m.value[1] if len(m.value) > 1 else None
    return (m.type, m.t, m.value[0], v1, m.landmark_id)


def write_measurements(path: Path, measurements: Sequence[Measurement]) -> None:
    write_csv(path, MEASUREMENT_HEADER, [measurement_row(m) for m in measurements])


def read_measurements(path: Path) -> List[Measurement]:
    out = []
    for r in read_csv(path, MEASUREMENT_HEADER).itertuples(index=False):
        value = (float(r.v0),) if r.v1 == "" else (float(r.v0), float(r.v1))
        lm = int(r.landmark_id) if r.landmark_id != "" else None
        out.append(Measurement(r.type, float(r.t), value, lm))
    return out


def write_landmarks(path: Path, landmarks: Sequence[Landmark]) -> None:
    write_csv(path, LANDMARK_HEADER, [(lm.id, lm.position[0], lm.position[1]) for lm in landmarks])


def read_landmarks(path: Path) -> List[Landmark]:
    table = read_csv(path, LANDMARK_HEADER)
    ids = table["id"].astype(int).to_numpy()
    xy = _floats(table[["x", "y"]])
    return [Landmark(int(i), (float(p[0]), float(p[1]))) for i, p in zip(ids, xy)]


# --- Estimativa ---

def read_variables(path: Path) -> List[Dict[str, Any]]:
    rows = []
    for r in read_csv(path, VARIABLE_HEADER).to_dict("records"):
        row: Dict[str, Any] = {"kind": r["kind"], "index": int(r["index"])}
        for key in VARIABLE_HEADER[2:]:
            row[key] = _optional_float(r[key])
        rows.append(row)
    return rows


def read_estimate_table(path: Path) -> TabulatedTrajectory:
    table = read_csv(path, ESTIMATE_HEADER)
    if table.empty:
        raise InvalidArgumentError(f"Estimativa vazia: {path}")
    times = _floats(table["t"])
    poses = _floats(table[["x", "y", "theta"]])
    covs = None
    if (table["sxx"] != "").all():
        sxx, sxy, syy, stt = _floats(table[["sxx", "sxy", "syy", "stt"]]).T
        # sem termos cruzados posição-rumo no CSV: bloco de rumo diagonal
        covs = np.zeros((len(table), 3, 3))
        covs[:, 0, 0], covs[:, 0, 1], covs[:, 1, 0] = sxx, sxy, sxy
        covs[:, 1, 1], covs[:, 2, 2] = syy, stt
    return TabulatedTrajectory(times, poses, covs)


def write_posterior(path: Path, posterior: Dict[str, np.ndarray]) -> None:
    np.savez(path, **posterior)
    logger.info(f"[STORAGE] {path}")


def read_posterior(path: Path) -> Optional[Dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        return None
    with np.load(path) as data:
        return {k: np.array(data[k]) for k in data.files}
