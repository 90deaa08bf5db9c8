"""Information objectives and the per-step returns that drive both policy levels."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .diffcore import DTYPE, ContractError


@dataclass(frozen=True)
class ObjectiveWeights:
    """alpha_1..3. Training requires alpha_il > 0 (checked by the run config); a
    zero alpha_il is accepted here so single channels can be analysed alone."""

    alpha_mi: float = 1.0
    alpha_di: float = 0.01
    alpha_il: float = 1.0

    def __post_init__(self):
        if min(self.alpha_mi, self.alpha_di, self.alpha_il) < 0:
            raise ContractError("objective weights must be nonnegative")
        if max(self.alpha_mi, self.alpha_di, self.alpha_il) == 0:
            raise ContractError("at least one objective weight must be positive")


def _wmean(values: torch.Tensor, weights: torch.Tensor | None) -> torch.Tensor:
    if weights is None:
        return values.mean()
    return (weights * values).sum() / weights.sum()


def l_mi(log_ppsi: torch.Tensor, context_entropy: float, weights: torch.Tensor | None = None) -> torch.Tensor:
    """H(C) + E[log P_psi(C | X)]; H(C) is a constant offset.

    ``weights`` turns the sample mean into an exact expectation over enumerated paths.
    """
    return context_entropy + _wmean(log_ppsi, weights)


def l_di(log_pw: torch.Tensor, logp_high: torch.Tensor, mask: torch.Tensor | None = None,
         weights: torch.Tensor | None = None) -> torch.Tensor:
    """sum_t E[log P_omega(Z_t | ...) - log pi_theta(Z_t | ...)], entropy taken at the sample."""
    terms = log_pw - logp_high
    if mask is not None:
        terms = terms * mask
    return _wmean(terms.sum(dim=-1), weights)


@dataclass
class ReturnTable:
    r_mi: torch.Tensor   # (B,)
    r_di: torch.Tensor   # (B, T): entry t-1 holds step t
    r_il: torch.Tensor   # (B, T): entry i holds R_IL^i
    ret: torch.Tensor    # (B, T): entry t-1 holds Ret_t


def suffix_sum(x: torch.Tensor) -> torch.Tensor:
    return x.flip(-1).cumsum(-1).flip(-1)


def assemble_returns(r_mi: torch.Tensor | None, r_di: torch.Tensor | None, r_il: torch.Tensor | None,
                     w: ObjectiveWeights, mask: torch.Tensor | None = None) -> ReturnTable:
    """Ret_t = a1 R_MI + sum_{i=t}^{T} (a2 R_DI^i + a3 R_IL^{i-1}).

    A component may be ``None`` only when its weight is zero.
    """
    ref = next((v for v in (r_il, r_di) if v is not None), None)
    if ref is None:
        raise ContractError("need per-step rewards to size the returns")
    B, T = ref.shape

    def need(v, weight, name, shape):
        if v is None:
            if weight != 0:
                raise ContractError(f"missing {name} with nonzero weight")
            return torch.zeros(shape, dtype=DTYPE)
        if tuple(v.shape) != shape:
            raise ContractError(f"{name} has shape {tuple(v.shape)}, expected {shape}")
        return v.detach().to(DTYPE)

    r_mi = need(r_mi, w.alpha_mi, "R_MI", (B,))
    r_di = need(r_di, w.alpha_di, "R_DI", (B, T))
    r_il = need(r_il, w.alpha_il, "R_IL", (B, T))
    step = w.alpha_di * r_di + w.alpha_il * r_il
    if mask is not None:
        step = step * mask
    ret = w.alpha_mi * r_mi[:, None] + suffix_sum(step)
    return ReturnTable(r_mi, r_di, r_il, ret)
