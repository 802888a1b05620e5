"""Detection and removal objectives."""

from __future__ import annotations

from .autograd import Tensor, avg_pool2, l1_mean, sobel_magnitude, tv_mean, weighted_sum

GAMMA1 = 0.00005
GAMMA2 = 0.02


def gradient_pyramid(x: Tensor, levels: int = 3) -> list:
    """Fixed perceptual stand-in: per-channel Sobel magnitude at 1, 1/2, 1/4 scale."""
    feats = []
    for level in range(levels):
        if level:
            x = avg_pool2(x)
        feats.append(sobel_magnitude(x))
    return feats


def loss_dnet(m_hat: Tensor, m: Tensor, gamma1: float = GAMMA1) -> Tensor:
    """mean |M - M_hat| + gamma1 * TV(M_hat)."""
    if m_hat.shape != m.shape:
        raise ValueError(f"shape mismatch {m_hat.shape} vs {m.shape}")
    return weighted_sum([(1.0, l1_mean(m_hat, m)), (gamma1, tv_mean(m_hat))])


def loss_rnet(t_hat: Tensor, t: Tensor, gamma2: float = GAMMA2, phi=gradient_pyramid) -> Tensor:
    """mean |T - T_hat| + gamma2 * sum over feature levels of mean |phi(T) - phi(T_hat)|.

    ``phi`` maps a tensor to a list of feature tensors and must be built
    from differentiable ops.
    """
    if t_hat.shape != t.shape:
        raise ValueError(f"shape mismatch {t_hat.shape} vs {t.shape}")
    terms = [(1.0, l1_mean(t_hat, t))]
    target = [f.detach() for f in phi(t.detach())]
    for fa, fb in zip(phi(t_hat), target):
        terms.append((gamma2, l1_mean(fa, fb)))
    return weighted_sum(terms)
