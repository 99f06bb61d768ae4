"""Process-level configuration for the beam management simulator."""

import os

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass


def _flag(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() in ("1", "true", "yes", "on")


class Config:
    """Application configuration read from the environment."""

    # Service
    API_KEY: str = os.getenv("SIMULATOR_API_KEY", "beam-sim-local-key")
    RESULTS_CALLBACK_URL: str = os.getenv("RESULTS_CALLBACK_URL", "")
    HOST: str = os.getenv("HOST", "0.0.0.0")
    PORT: int = int(os.getenv("PORT", 8000))
    RUN_TIMEOUT_MINUTES: int = int(os.getenv("RUN_TIMEOUT_MINUTES", 60))

    # Experiments
    OUT_DIR: str = os.getenv("OUT_DIR", "results")
    RVQ_CACHE_DIR: str = os.getenv("RVQ_CACHE_DIR", "")
    DEFAULT_PROFILE: str = os.getenv("DEFAULT_PROFILE", "desk")
    WORKERS: int = int(os.getenv("WORKERS", 1))
    PROGRESS: bool = _flag("PROGRESS", "true")

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO").upper()
    DEBUG: bool = _flag("DEBUG", "false")

    @classmethod
    def validate(cls, raise_error: bool = True) -> bool:
        """Validate process settings."""
        problems = []
        if cls.WORKERS < 1:
            problems.append("WORKERS must be >= 1")
        if cls.DEFAULT_PROFILE not in ("desk", "full"):
            problems.append(f"DEFAULT_PROFILE must be desk or full, got {cls.DEFAULT_PROFILE!r}")
        if cls.RVQ_CACHE_DIR and not os.path.isdir(cls.RVQ_CACHE_DIR):
            problems.append(f"RVQ_CACHE_DIR {cls.RVQ_CACHE_DIR!r} is not a directory")
        if problems:
            if raise_error:
                raise ValueError("; ".join(problems))
            return False
        return True
