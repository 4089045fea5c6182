import os

from dotenv import load_dotenv

load_dotenv()


def _int_env(name: str, default: int) -> int:
    value = os.getenv(name, "")
    if not value.strip():
        return default
    try:
        return max(1, int(value))
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {value!r}")


class Settings:
    """Process-level settings read from the environment (and .env)"""

    # Worker cap for tiled inference and TTA branches; --threads overrides
    THREADS = _int_env("INSTANSEG_THREADS", os.cpu_count() or 1)

    # Logging
    LOG_LEVEL = os.getenv("INSTANSEG_LOG_LEVEL", "INFO")
    LOG_DIR = os.getenv("INSTANSEG_LOG_DIR", "logs")

    # Float width used at inference: float64 or float32
    PRECISION = os.getenv("INSTANSEG_PRECISION", "float64")


settings = Settings()
