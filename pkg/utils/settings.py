# utils/settings.py
import os
from dotenv import load_dotenv

load_dotenv()

N_JOBS = int(os.getenv("SURVDTR_N_JOBS", "1"))


def resolve_n_jobs(n_jobs=None):
    """Explicit worker count wins; otherwise SURVDTR_N_JOBS from the environment."""
    if n_jobs is None:
        return N_JOBS
    return int(n_jobs)
