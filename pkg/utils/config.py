from decouple import config
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Logging
    log_level: str = config("MMOT_LOG_LEVEL", cast=str, default="INFO")
    log_file: str = config("MMOT_LOG_FILE", cast=str, default="logs/mmot.log")

    # Reports
    output_dir: str = config("MMOT_OUTPUT_DIR", cast=str, default="data/reports")

    # Measures
    atom_tol: float = config("MMOT_ATOM_TOL", cast=float, default=1e-12)
    order_tol: float = config("MMOT_ORDER_TOL", cast=float, default=1e-9)
    plan_mass_tol: float = config("MMOT_PLAN_MASS_TOL", cast=float, default=1e-9)
    strictness_tol: float = config("MMOT_STRICTNESS_TOL", cast=float, default=1e-12)

    # Certification
    certification_tol: float = config("MMOT_CERTIFICATION_TOL", cast=float, default=1e-8)

    # Linear programs
    lp_feasibility_tol: float = config("MMOT_LP_FEASIBILITY_TOL", cast=float, default=1e-9)
    lp_optimality_tol: float = config("MMOT_LP_OPTIMALITY_TOL", cast=float, default=1e-9)
    lp_iteration_factor: int = config("MMOT_LP_ITERATION_FACTOR", cast=int, default=50)

    # Geometry
    conditional_noise_floor: float = config("MMOT_CONDITIONAL_NOISE_FLOOR", cast=float, default=1e-6)
    extremality_bar: float = config("MMOT_EXTREMALITY_BAR", cast=float, default=0.99)
    hull_tol: float = config("MMOT_HULL_TOL", cast=float, default=1e-9)
    fd_step: float = config("MMOT_FD_STEP", cast=float, default=1e-6)
    fd_check_step: float = config("MMOT_FD_CHECK_STEP", cast=float, default=1e-7)
    richardson_tol: float = config("MMOT_RICHARDSON_TOL", cast=float, default=1e-4)
    twist_tol: float = config("MMOT_TWIST_TOL", cast=float, default=1e-6)
    three_point_tol: float = config("MMOT_THREE_POINT_TOL", cast=float, default=1e-6)

    # Scenarios
    default_grid_size: int = config("MMOT_DEFAULT_GRID_SIZE", cast=int, default=12)
    max_grid_atoms: int = config("MMOT_MAX_GRID_ATOMS", cast=int, default=24)
    batch_concurrency: int = config("MMOT_BATCH_CONCURRENCY", cast=int, default=4)

    # Model configuration
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore"
    )


settings = Settings()
