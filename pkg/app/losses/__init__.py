from app.losses.losses import (
    INSTANCE_CAP,
    LossValue,
    bce_loss,
    cap_candidates,
    dice_loss,
    instance_loss,
    joint_loss,
    lovasz_grad,
    lovasz_hinge,
    seed_loss,
)

__all__ = [
    "INSTANCE_CAP",
    "LossValue",
    "bce_loss",
    "cap_candidates",
    "dice_loss",
    "instance_loss",
    "joint_loss",
    "lovasz_grad",
    "lovasz_hinge",
    "seed_loss",
]
