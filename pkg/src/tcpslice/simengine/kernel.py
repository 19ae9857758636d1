"""Selects the packet kernel backend at import.

The compiled core is used when it was built; ``TCPSLICE_PURE_PYTHON=1``
forces the pure-Python fallback. Both produce identical traces.
"""

from __future__ import annotations

import os

from ._kernel import PacketKernel as PyPacketKernel

try:
    from ._ckernel import PacketKernel as CPacketKernel
except ImportError:  # extension not built
    CPacketKernel = None

if CPacketKernel is not None and not os.environ.get("TCPSLICE_PURE_PYTHON"):
    PacketKernel = CPacketKernel
else:
    PacketKernel = PyPacketKernel

BACKEND = PacketKernel.backend


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if CPacketKernel is not None else [])


def get_kernel(backend: str | None = None):
    if backend is None:
        return PacketKernel
    if backend == "python":
        return PyPacketKernel
    if backend == "cython":
        if CPacketKernel is None:
            raise RuntimeError("compiled kernel not built; reinstall with a C compiler and Cython")
        return CPacketKernel
    raise ValueError(f"unknown kernel backend {backend!r}")
