"""
Named Attack Presets

Composite baselines with their default parameters. Adding `svd_hook`
turns any preset into its logit-fusion variant.
"""

from typing import Callable, Dict, List, Optional

from ..core.exceptions import ConfigError
from ..core.models import (
    AttackConfig,
    AttackMethod,
    DITransform,
    SITransform,
    SvdHook,
    TITransform,
    VTTransform,
)

PRESETS: Dict[str, Callable[[], dict]] = {
    "i-fgsm": lambda: {"method": AttackMethod.IFGSM},
    "mi-fgsm": lambda: {"method": AttackMethod.MIFGSM},
    "ni-fgsm": lambda: {"method": AttackMethod.NIFGSM},
    "di-fgsm": lambda: {"method": AttackMethod.MIFGSM, "transforms": [DITransform()]},
    "ti-fgsm": lambda: {"method": AttackMethod.MIFGSM, "transforms": [TITransform()]},
    "ti-dim": lambda: {"method": AttackMethod.MIFGSM, "transforms": [DITransform(), TITransform()]},
    "si-ni-fgsm": lambda: {"method": AttackMethod.NIFGSM, "transforms": [SITransform()]},
    "vt-mi-fgsm": lambda: {"method": AttackMethod.MIFGSM, "transforms": [VTTransform()]},
    "vt-ti-dim": lambda: {
        "method": AttackMethod.MIFGSM,
        "transforms": [DITransform(), TITransform(), VTTransform()],
    },
}


def preset_names() -> List[str]:
    return list(PRESETS)


def preset(name: str, /, svd_hook: Optional[SvdHook] = None, **overrides) -> AttackConfig:
    """AttackConfig for a named preset; keyword overrides win over preset values"""
    try:
        fields = PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown attack preset '{name}'; known: {', '.join(PRESETS)}") from None
    fields.update({"name": name, "svd_hook": svd_hook})
    fields.update(overrides)
    return AttackConfig(**fields)
