import pandera as pa
from pandera import Column, Check

from config import log_event

PHANTOM_SCHEMA = pa.DataFrameSchema(
    {
        "xmin": Column(float, nullable=False),
        "xmax": Column(float, nullable=False),
        "ymin": Column(float, nullable=False),
        "ymax": Column(float, nullable=False),
        "value": Column(float, nullable=False),
    },
    checks=[
        Check(lambda df: df["xmax"] > df["xmin"], error="xmax must exceed xmin"),
        Check(lambda df: df["ymax"] > df["ymin"], error="ymax must exceed ymin"),
    ],
    coerce=True,
)

GRID_SCHEMA = pa.DataFrameSchema(
    {
        "x": Column(float, nullable=False),
        "y": Column(float, nullable=False),
        "value": Column(float, nullable=False),
    },
    coerce=True,
)

MATRIX_SCHEMA = pa.DataFrameSchema(
    {
        "i": Column(int, Check.greater_than_or_equal_to(0), nullable=False),
        "j": Column(int, Check.greater_than_or_equal_to(0), nullable=False),
        "value": Column(float, nullable=False),
    },
    coerce=True,
)

TRACE_SCHEMA = pa.DataFrameSchema(
    {
        "phase": Column(str, Check.isin(["I", "II", "III"]), nullable=False),
        "k": Column(int, Check.greater_than_or_equal_to(0), nullable=False),
        "rho": Column(float, Check.greater_than_or_equal_to(0), nullable=False),
        "discrepancy": Column(float, Check.greater_than_or_equal_to(0), nullable=False),
        "converged": Column(bool, nullable=False),
    },
    coerce=True,
)

DISTANCE_CURVE_SCHEMA = pa.DataFrameSchema(
    {
        "rho": Column(float, Check.greater_than_or_equal_to(0), nullable=False),
        "d": Column(float, Check.greater_than_or_equal_to(0), nullable=False),
    },
    checks=[
        Check(lambda df: df["rho"].is_monotonic_increasing and df["rho"].is_unique,
              error="rho must be strictly increasing"),
    ],
    coerce=True,
)

RESULTS_SCHEMA = pa.DataFrameSchema(
    {
        "s": Column(float, Check.greater_than_or_equal_to(0), nullable=False),
        "delta": Column(float, Check.greater_than_or_equal_to(0), nullable=False),
        "discrepancy": Column(float, Check.greater_than_or_equal_to(0), nullable=False),
        "rho": Column(float, Check.greater_than_or_equal_to(0), nullable=False),
        "err_inf": Column(float, Check.greater_than_or_equal_to(0), nullable=False),
        "err_l2": Column(float, Check.greater_than_or_equal_to(0), nullable=False),
        "bregman_pair": Column(float, nullable=False),
        "success": Column(bool, nullable=False),
    },
    strict=True,
    ordered=True,
    coerce=True,
)


def validate_frame(df, schema: pa.DataFrameSchema, name: str):
    try:
        return schema.validate(df, lazy=True)
    except pa.errors.SchemaErrors as e:
        log_event("VALIDATION_FAILED", table=name, rows=len(df), error=str(e)[:200])
        raise ValueError(f"Schema validation failed for {name}: {e}") from e
