import os
import sys
from datetime import datetime

from dotenv import load_dotenv

load_dotenv()


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() == "true"


def _env_floats(name: str, default: str) -> tuple:
    raw = os.getenv(name, default)
    return tuple(float(v) for v in raw.split(",") if v.strip())


MESH_N = int(os.getenv("IVANOV_MESH_N", "64"))
LITERAL_VERTICES = _env_bool("IVANOV_LITERAL_VERTICES", "False")
POTENTIAL_C = float(os.getenv("IVANOV_C", "1.0"))
MASS_LUMPING = _env_bool("IVANOV_MASS_LUMPING", "True")

TAU = float(os.getenv("IVANOV_TAU", "1.1"))
RHO0 = float(os.getenv("IVANOV_RHO0", "10.0"))
NOISE_LEVELS = _env_floats("IVANOV_NOISE", "1,0.1,0.01,0.001,0.0001")
SEED = int(os.getenv("IVANOV_SEED", "42"))
PHASE_BUDGET = int(os.getenv("IVANOV_PHASE_BUDGET", "100"))

SSN_Q = float(os.getenv("IVANOV_SSN_Q", "0.7"))
SSN_I_MAX = int(os.getenv("IVANOV_SSN_I_MAX", "10"))
SSN_K_MAX = int(os.getenv("IVANOV_SSN_K_MAX", "30"))
SSN_TOL = float(os.getenv("IVANOV_SSN_TOL", "1e-9"))

SOLVER_TOL = float(os.getenv("IVANOV_SOLVER_TOL", "1e-12"))

OUTPUT_DIR = os.getenv("IVANOV_OUTPUT_DIR", "./data/results")
PHANTOM_PATH = os.getenv("IVANOV_PHANTOM_PATH", "")

VERBOSE = _env_bool("IVANOV_VERBOSE", "False")


def set_verbose(flag: bool) -> None:
    global VERBOSE
    VERBOSE = flag


def is_verbose() -> bool:
    return VERBOSE


PREFECT_API_URL = os.getenv("PREFECT_API_URL", "")


def log_event(event: str, **kwargs) -> None:
    timestamp = datetime.now().isoformat()
    details = " | ".join(f"{k}={v}" for k, v in kwargs.items())
    print(f"[{timestamp}] {event} | {details}", file=sys.stdout, flush=True)


def configure_prefect() -> None:
    # without an API url prefect falls back to its ephemeral server
    if PREFECT_API_URL:
        os.environ["PREFECT_API_URL"] = PREFECT_API_URL


if __name__ == "__main__":
    configure_prefect()
    log_event(
        "CONFIG",
        mesh_n=MESH_N,
        c=POTENTIAL_C,
        tau=TAU,
        rho0=RHO0,
        noise=",".join(str(s) for s in NOISE_LEVELS),
        seed=SEED,
        prefect=os.getenv("PREFECT_API_URL", "ephemeral"),
    )
