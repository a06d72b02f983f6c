"""Trainable model components: autodiff core, encoder, losses, optimizer and checkpoints."""

from . import ndiff
from . import encoder
from . import losses
from . import optim
from . import checkpoint
