"""Kernel backend selection.

The compiled extension is used when importable; set EXAMGEN_KERNELS=python
to force the numpy fallback or EXAMGEN_KERNELS=compiled to require the
extension (ImportError if it was not built).
"""

from __future__ import annotations

import os

_choice = os.environ.get("EXAMGEN_KERNELS", "").strip().lower()

if _choice == "python":
    from examgen.neural import _kernels_py as kernels
elif _choice == "compiled":
    from examgen.neural import _kernels as kernels  # type: ignore[no-redef]
else:
    try:
        from examgen.neural import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        from examgen.neural import _kernels_py as kernels  # type: ignore[no-redef]


def backend_name() -> str:
    return kernels.BACKEND
