"""
Excecoes do laboratorio.

Todas herdam de DiffulaError para que o script principal consiga mapear
falhas em codigos de saida (2 = configuracao, 3 = execucao).
"""

from typing import Optional

import torch


class DiffulaError(Exception):
    """Base error for the package."""


class ConfigError(DiffulaError, ValueError):
    """Invalid or unresolvable run configuration."""


class ManifestMismatchError(DiffulaError, ValueError):
    """Layer names or shapes disagree between two gradient manifests."""


class CaptureIntegrityError(DiffulaError):
    """A capture file is truncated, corrupted or of an unknown version."""


class NonFiniteError(DiffulaError, ArithmeticError):
    """A loss or tensor became NaN/inf."""


class TrainingDivergedError(NonFiniteError):
    """Toy training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int, step: int, last_loss: float) -> None:
        super().__init__(f"{message} (epoch={epoch}, step={step}, last_loss={last_loss})")
        self.epoch = epoch
        self.step = step
        self.last_loss = last_loss


class AttackDivergedError(NonFiniteError):
    """An attack hit a non-finite value; keeps the last good iterate."""

    def __init__(
        self,
        module: str,
        step: int,
        last_snapshot: Optional[torch.Tensor] = None,
    ) -> None:
        super().__init__(f"[{module}] non-finite value at step {step}")
        self.module = module
        self.step = step
        self.last_snapshot = last_snapshot


class ZeroGradientWarning(UserWarning):
    """A layer gradient (or prior gradient) has zero norm."""


class DegenerateEmbeddingWarning(UserWarning):
    """An adapter returned an all-zero embedding."""


class IncompatibleRunsError(DiffulaError, ValueError):
    """Run directories that cannot be reported together (different corpora)."""
