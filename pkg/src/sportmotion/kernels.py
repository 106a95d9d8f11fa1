"""Backend selection for the kinematics kernels.

The compiled extension is used when it imports; set
``SPORTMOTION_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _fk_py

python_backend = _fk_py
compiled_backend = None

if os.environ.get("SPORTMOTION_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _fk_ext as compiled_backend  # type: ignore[no-redef]
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "compiled" if backend is compiled_backend else "python"

fk_jacobian = backend.fk_jacobian
rot_and_left_jacobian = backend.rot_and_left_jacobian
