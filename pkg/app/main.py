"""FastAPI service for running beam management experiments."""

from fastapi import FastAPI, Depends, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from fastapi.exceptions import RequestValidationError
from contextlib import asynccontextmanager
from pathlib import Path
import logging
import time

from app import mmwave, sub6
from app.auth import validate_api_key
from app.callback import send_run_result
from app.config import Config
from app.errors import ConfigurationError
from app.experiment import read_metrics, run_experiment
from app.runs import run_registry
from app.scenario import PROFILES, dotted_overrides, load_scenario
from app.schemas import ExperimentRequest, OverheadResponse, RunSummary

logging.basicConfig(level=getattr(logging, Config.LOG_LEVEL, logging.INFO))
logger = logging.getLogger(__name__)

VERSION = "1.0.0"


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Validate process settings on startup."""
    try:
        Config.validate()
        run_registry.timeout_minutes = Config.RUN_TIMEOUT_MINUTES
        logger.info(f"Beam management simulator API starting (default profile {Config.DEFAULT_PROFILE})")
    except ValueError as e:
        logger.error(f"Configuration error: {e}")

    yield

    logger.info("Application shutting down")


app = FastAPI(
    title="Dual-Band Beam Management Simulator",
    description="Runs band-assignment and beam-management experiments and returns summary metrics",
    version=VERSION,
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.middleware("http")
async def log_requests(request: Request, call_next):
    """Log requests and add timing information."""
    is_health_check = request.url.path in ["/health", "/"]
    start_time = time.time()
    if not is_health_check:
        logger.info(f"Incoming request: {request.method} {request.url.path}")

    response = await call_next(request)
    process_time = time.time() - start_time
    response.headers["X-Process-Time"] = str(process_time)
    if not is_health_check:
        logger.info(f"Request completed in {process_time:.3f}s with status {response.status_code}")
    return response


@app.exception_handler(RequestValidationError)
async def validation_exception_handler(request: Request, exc: RequestValidationError):
    """Report which request fields failed validation."""
    errors = exc.errors()
    logger.error(f"Validation error: {errors}")
    fields = [str(err["loc"][-1]) for err in errors]
    return JSONResponse(
        status_code=422,
        content={
            "detail": f"Invalid request field(s): {', '.join(fields)}",
            "example_request": {"profile": "desk", "overrides": {"experiment.n_episodes": 2}, "policy": "genie"},
        },
    )


@app.exception_handler(ConfigurationError)
async def configuration_exception_handler(request: Request, exc: ConfigurationError):
    logger.error(f"Scenario rejected: {exc}")
    return JSONResponse(status_code=422, content={"detail": str(exc), "field": exc.field})


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    """Return JSON for anything unhandled."""
    logger.error(f"Unhandled exception: {str(exc)}", exc_info=True)
    return JSONResponse(
        status_code=500,
        content={"detail": "An unexpected error occurred. Please try again."},
    )


@app.get("/")
async def root() -> dict:
    """API info."""
    return {
        "name": "Dual-Band Beam Management Simulator",
        "version": VERSION,
        "endpoints": ["/health", "/overheads", "/experiments", "/experiments/{run_id}"],
    }


@app.get("/health")
async def health_check() -> dict:
    return {
        "status": "healthy",
        "timestamp": time.time(),
        "active_runs": run_registry.get_active_run_count(),
        "profiles": list(PROFILES),
    }


@app.get("/overheads", response_model=OverheadResponse)
async def overheads(profile: str = Config.DEFAULT_PROFILE) -> OverheadResponse:
    """Training overheads of a profile in slots."""
    cfg = load_scenario(profile=profile)
    mm, s6 = cfg.mmwave, cfg.sub6
    return OverheadResponse(
        profile=profile,
        m_rf=mmwave.analog_overhead(mm.m_ss, mm.n_ss, mm.nu_bs, mm.nu_ue),
        m_bb=mmwave.digital_overhead(mm.kappa_rvq, mm.kappa_channel),
        m_bb_sub6=sub6.pmi_overhead(s6.nu_pmi, s6.kappa_channel),
    )


@app.post("/experiments", response_model=RunSummary)
def create_experiment(request: ExperimentRequest, api_key: str = Depends(validate_api_key)) -> RunSummary:
    """
    Run an experiment synchronously and return its summary rows.

    Args:
        request: Profile, dotted overrides and optional policy/seed/episode limits
        api_key: Validated API key from header

    Returns:
        RunSummary with one summary row per (seed, sweep value, policy)
    """
    overrides = dict(request.overrides)
    if request.seeds is not None:
        overrides["experiment.n_seeds"] = request.seeds
    if request.episodes is not None:
        overrides["experiment.n_episodes"] = request.episodes
    cfg = load_scenario(profile=request.profile, overrides=[dotted_overrides(overrides)])
    policies = [request.policy] if request.policy else list(cfg.experiment.policies)

    record = run_registry.create_run(request.profile, policies)
    out_dir = Path(Config.OUT_DIR) / record.run_id
    try:
        paths = run_experiment(cfg, str(out_dir), policies)
        record.finish(read_metrics(paths["summary"]), str(out_dir))
    except Exception as e:
        record.fail(str(e))
        raise

    summary = record.to_summary()
    send_run_result(summary, policies)
    return summary


@app.get("/experiments/{run_id}", response_model=RunSummary)
async def get_experiment(run_id: str, api_key: str = Depends(validate_api_key)) -> RunSummary:
    record = run_registry.get_run(run_id)
    if record is None:
        raise HTTPException(status_code=404, detail=f"Run {run_id} not found or expired")
    return record.to_summary()


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(
        app,
        host=Config.HOST,
        port=Config.PORT,
    )
