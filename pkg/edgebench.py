import sys
from pathlib import Path

# Allow imports from the backend package
sys.path.append(str(Path(__file__).resolve().parent / "edgebench_backend"))

from app.cli import main


if __name__ == "__main__":
    sys.exit(main())
