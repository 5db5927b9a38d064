from .backend import active_backend, available_backends, set_backend
from .core import (
    STOP_TRANSMITTANCE,
    AttributeGradients,
    RenderOutput,
    render,
    render_backward,
    render_instance_mask,
)

__all__ = [
    "AttributeGradients",
    "RenderOutput",
    "STOP_TRANSMITTANCE",
    "active_backend",
    "available_backends",
    "render",
    "render_backward",
    "render_instance_mask",
    "set_backend",
]
