from contextlib import contextmanager

from fastapi import HTTPException, status

from .errors import EdgebenchError, MalformedConfig


@contextmanager
def domain_errors():
    """Turn simulator failures into HTTP errors."""
    try:
        yield
    except MalformedConfig as exc:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail={"field": exc.field_path, "message": exc.message},
        )
    except EdgebenchError as exc:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc))
