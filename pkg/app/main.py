from fastapi import FastAPI, HTTPException, BackgroundTasks
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field
from typing import Any, Dict, List, Literal, Optional
from dotenv import load_dotenv
from pathlib import Path
import logging
import uuid

from app import __version__
from app.cli import estimate_scenario, evaluate_dirs, interpolate_rows, simulate_scenario
from app.config import SolverConfig, load_settings, parse_scenario_config
from app.errors import EstimationError
from app.storage import ESTIMATE_HEADER

load_dotenv()
settings = load_settings()

# Configura logging
logging.basicConfig(level=getattr(logging, settings.log_level, logging.INFO))
logger = logging.getLogger(__name__)

# Inicializa FastAPI
app = FastAPI(title="ctestim", version=__version__)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

RUN_ID_PATTERN = r"^[A-Za-z0-9_-]{1,64}$"


def _run_dir(run_id: str) -> Path:
    return Path(settings.data_dir) / run_id


def _http_error(e: Exception, context: str) -> HTTPException:
    if isinstance(e, EstimationError):
        logger.error(f"[API] {context}: {type(e).__name__}: {e.message}")
        return HTTPException(status_code=e.http_status, detail=e.to_dict())
    logger.error(f"[API] {context}: {type(e).__name__}: {e}")
    return HTTPException(status_code=500, detail=str(e))


# --- Modelos de requisição ---

class SimulateRequest(BaseModel):
    config: Dict[str, Any]
    run_id: Optional[str] = Field(None, pattern=RUN_ID_PATTERN)


class EstimateRequest(BaseModel):
    scenario_id: str = Field(..., pattern=RUN_ID_PATTERN)
    backend: Optional[Literal["li", "spline", "gp"]] = None
    order: Optional[int] = None
    knot_hz: Optional[float] = None
    prior: Optional[Literal["wnoa", "wnoj"]] = None
    state_hz: Optional[float] = None
    qc: Optional[float] = None
    sensors: Optional[List[Literal["gyro", "accel", "rb"]]] = None
    query_hz: float = Field(100.0, gt=0)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    run_id: Optional[str] = Field(None, pattern=RUN_ID_PATTERN)

    def overrides(self) -> Dict[str, Any]:
        data = self.model_dump(include={"backend", "order", "knot_hz", "prior", "state_hz", "sensors"}, exclude_none=True)
        if self.qc is not None:
            data["qc"] = [self.qc] * 3
        return data


class EvaluateRequest(BaseModel):
    scenario_id: str = Field(..., pattern=RUN_ID_PATTERN)
    estimate_id: str = Field(..., pattern=RUN_ID_PATTERN)


class InterpolateRequest(BaseModel):
    estimate_id: str = Field(..., pattern=RUN_ID_PATTERN)
    times: List[float] = Field(..., min_length=1)


# --- Endpoints ---

@app.get("/")
def read_root():
    return {"service": "ctestim", "version": __version__}


@app.get("/health")
def health():
    return {"status": "ok", "data_dir": str(settings.data_dir)}


@app.post("/simulate")
def simulate(req: SimulateRequest):
    """
    Gera um cenário (verdade, landmarks e medidas) em data_dir/<run_id>.
    """
    run_id = req.run_id or uuid.uuid4().hex
    try:
        config = parse_scenario_config(req.config)
        manifest = simulate_scenario(config, _run_dir(run_id))
        logger.info(f"[API] Cenário {run_id} gerado ({manifest.metrics.get('measurements')} medidas)")
        return {"run_id": run_id, "manifest": manifest.model_dump(mode="json")}
    except Exception as e:
        raise _http_error(e, "simulate")


# Dicionário para armazenar o status das estimações
run_status: Dict[str, Dict[str, Any]] = {}


@app.get("/run-status/{run_id}")
def get_run_status(run_id: str):
    """
    Retorna o status de uma estimação disparada em background.
    """
    return run_status.get(run_id, {"status": "unknown", "message": "Execução não encontrada"})


def run_estimate_task(run_id: str, req: EstimateRequest):
    run_status[run_id] = {"status": "running", "message": "Estimando trajetória..."}
    try:
        manifest = estimate_scenario(_run_dir(req.scenario_id), _run_dir(run_id), req.overrides(), req.solver, req.query_hz)
        run_status[run_id] = {"status": "success", "message": "Estimação concluída",
                              "metrics": manifest.metrics, "solve_report": manifest.solve_report.model_dump()}
    except EstimationError as e:
        logger.error(f"[API] Estimação {run_id} falhou: {type(e).__name__}: {e.message}")
        run_status[run_id] = {"status": "error", "message": e.message, "error": e.to_dict()}
    except Exception as e:
        logger.error(f"[API] Estimação {run_id} falhou: {e}")
        run_status[run_id] = {"status": "error", "message": str(e)}


@app.post("/estimate")
def trigger_estimate(req: EstimateRequest, background_tasks: BackgroundTasks):
    """
    Inicia a estimação de um cenário já simulado.
    """
    if not _run_dir(req.scenario_id).exists():
        raise HTTPException(status_code=404, detail=f"Cenário {req.scenario_id} não encontrado")
    run_id = req.run_id or uuid.uuid4().hex
    run_status[run_id] = {"status": "queued", "message": "Na fila"}
    background_tasks.add_task(run_estimate_task, run_id, req)
    return {"run_id": run_id, "message": f"Estimação iniciada sobre {req.scenario_id}"}


@app.post("/evaluate")
def evaluate_run(req: EvaluateRequest):
    try:
        return evaluate_dirs(_run_dir(req.scenario_id), _run_dir(req.estimate_id))
    except Exception as e:
        raise _http_error(e, "evaluate")


@app.post("/interpolate")
def interpolate(req: InterpolateRequest):
    """
    Consulta a estimativa em tempos arbitrários; mesmo esquema de colunas do estimate.csv.
    """
    try:
        rows = interpolate_rows(_run_dir(req.estimate_id), req.times)
        return {"rows": [dict(zip(ESTIMATE_HEADER, row)) for row in rows]}
    except Exception as e:
        raise _http_error(e, "interpolate")
