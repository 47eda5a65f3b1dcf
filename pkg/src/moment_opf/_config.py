import os
from dotenv import load_dotenv


def _default_solver() -> str:
    try:
        import cvxpy

        if "MOSEK" in cvxpy.installed_solvers():
            return "MOSEK"
    except ImportError:
        pass
    return "CLARABEL"


def _parse_bool(name: str, value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{name} must be a boolean, got {value!r}")


class MomentOpfConfig:
    """Global configuration holder populated from environment variables.

    Attributes are class-level so they act as a simple singleton used across
    the library. Call :py:meth:`init_from_environment` during startup to load
    values from a `.env` file and the process environment. Settings models
    read their defaults from here, so explicit arguments always win.
    """

    solver: str = _default_solver()
    log_level: str = "WARNING"
    even_blocks: bool = True
    angle_reference: str = "eliminate"
    merge_cliques: bool = True
    merge_limit: int | None = None
    case_dir: str | None = None

    @staticmethod
    def init_from_environment():
        """Load configuration from environment and `.env` file.

        Reads MOPF_* environment variables and assigns class attributes.
        Raises ``ValueError`` naming the variable when a value cannot be
        converted.
        """
        load_dotenv()

        MomentOpfConfig.solver = os.environ.get("MOPF_SOLVER", _default_solver()).upper()
        MomentOpfConfig.log_level = os.environ.get("MOPF_LOG_LEVEL", "WARNING").upper()
        MomentOpfConfig.case_dir = os.environ.get("MOPF_CASE_DIR")

        MomentOpfConfig.even_blocks = _parse_bool(
            "MOPF_EVEN_BLOCKS", os.environ.get("MOPF_EVEN_BLOCKS", "true")
        )
        MomentOpfConfig.merge_cliques = _parse_bool(
            "MOPF_MERGE_CLIQUES", os.environ.get("MOPF_MERGE_CLIQUES", "true")
        )

        # largest first-order moment-block dimension a merged clique may reach
        merge_limit_str = os.environ.get("MOPF_MERGE_LIMIT")
        try:
            MomentOpfConfig.merge_limit = int(merge_limit_str) if merge_limit_str else None
        except ValueError:
            raise ValueError(f"MOPF_MERGE_LIMIT must be an integer, got {merge_limit_str!r}")

        angle_reference = os.environ.get("MOPF_ANGLE_REFERENCE", "eliminate").lower()
        if angle_reference not in ("eliminate", "constrain"):
            raise ValueError(
                f"MOPF_ANGLE_REFERENCE must be 'eliminate' or 'constrain', got {angle_reference!r}"
            )
        MomentOpfConfig.angle_reference = angle_reference

        if MomentOpfConfig.log_level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"MOPF_LOG_LEVEL is not a logging level: {MomentOpfConfig.log_level!r}")
