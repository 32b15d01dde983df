from stablescore.serving.backends import ExpertBackend
from stablescore.serving.service import (
    ScoringService,
    ServiceSettings,
    ServingSnapshot,
    ShadowRecord,
    load_deployment,
)

__all__ = [
    "ExpertBackend",
    "ScoringService",
    "ServiceSettings",
    "ServingSnapshot",
    "ShadowRecord",
    "load_deployment",
]
