"""
Directed channel adjacency, the normalised acyclicity penalty, and adjacency-biased attention
"""

import logging
import math
from typing import Optional, Union

import numpy as np
import torch
import torch.nn as nn

from ..errors import InvalidArgumentError
from ..numerics import matexp_trace

logger = logging.getLogger(__name__)

LOG_EPS = 1e-8
MASKED_LOGIT = -30.0


# ==================== ADJACENCY ====================
def adjacency(U: torch.Tensor, V: torch.Tensor, b: torch.Tensor,
              m_prior: Optional[torch.Tensor] = None) -> torch.Tensor:
    """A = sigmoid(U V^T + b) * M_prior"""
    if U.ndim != 2 or U.shape != V.shape:
        raise InvalidArgumentError(f"U and V must be matching C x r matrices, got {tuple(U.shape)} / {tuple(V.shape)}")
    A = torch.sigmoid(U @ V.T + b)
    if m_prior is not None:
        if m_prior.shape != A.shape:
            raise InvalidArgumentError(f"M_prior shape {tuple(m_prior.shape)} does not match A {tuple(A.shape)}")
        A = A * m_prior
    return A


class AdjacencyParams(nn.Module):
    """Low-rank factors U, V, a scalar logit bias b and a fixed 0/1 prior mask"""

    def __init__(self, n_channels: int, rank: int, bias_init: float = -1.0,
                 m_prior: Optional[np.ndarray] = None):
        super().__init__()
        self.bias_init = bias_init
        self.U = nn.Parameter(torch.zeros(n_channels, rank))
        self.V = nn.Parameter(torch.zeros(n_channels, rank))
        self.b = nn.Parameter(torch.tensor(float(bias_init)))
        prior = np.ones((n_channels, n_channels)) if m_prior is None else np.asarray(m_prior, dtype=float)
        if prior.shape != (n_channels, n_channels) or not np.all(np.isin(prior, (0.0, 1.0))):
            raise InvalidArgumentError("M_prior must be a C x C 0/1 matrix")
        self.register_buffer("m_prior", torch.from_numpy(prior))

    @property
    def n_channels(self) -> int:
        return int(self.U.shape[0])

    def forward(self) -> torch.Tensor:
        return adjacency(self.U, self.V, self.b, self.m_prior.to(self.U.dtype))


# ==================== ACYCLICITY ====================
class MatexpTrace(torch.autograd.Function):
    """tr(exp(M)) with the analytic gradient exp(M)^T"""

    @staticmethod
    def forward(ctx, M: torch.Tensor) -> torch.Tensor:
        trace, grad = matexp_trace(M.detach().cpu().numpy(), want_gradient=True)
        ctx.save_for_backward(torch.from_numpy(grad).to(M))
        return M.new_tensor(trace)

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor) -> torch.Tensor:
        (grad,) = ctx.saved_tensors
        return grad_output * grad


def dag_penalty(A: Union[torch.Tensor, np.ndarray]) -> Union[torch.Tensor, float]:
    """h(A) = (tr(exp(A*A)) - C) / C; zero exactly when the support of A is acyclic"""
    if isinstance(A, np.ndarray):
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InvalidArgumentError(f"dag_penalty needs a square matrix, got {A.shape}")
        if np.any(A < 0):
            raise InvalidArgumentError("dag_penalty needs a non-negative matrix")
        trace, _ = matexp_trace(A * A)
        return (trace - A.shape[0]) / A.shape[0]

    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"dag_penalty needs a square matrix, got {tuple(A.shape)}")
    if bool((A.detach() < 0).any()):
        raise InvalidArgumentError("dag_penalty needs a non-negative matrix")
    C = A.shape[0]
    return (MatexpTrace.apply(A * A) - C) / C


# ==================== ATTENTION ====================
def adjacency_log_bias(A: torch.Tensor, m_prior: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Query-row / key-column bias log(A^T + eps); pairs excluded by the prior get a hard floor

    Row j, column i of the result governs how much query channel j attends key channel i,
    which is A[i, j] (i as a predecessor of j).
    """
    bias = torch.log(A.T + LOG_EPS)
    if m_prior is not None:
        bias = torch.where(m_prior.T > 0, bias, torch.full_like(bias, MASKED_LOGIT))
    return bias


def masked_attention_weights(q: torch.Tensor, k: torch.Tensor, A: torch.Tensor,
                             m_prior: Optional[torch.Tensor] = None) -> torch.Tensor:
    """softmax(Q K^T / sqrt(d_h) + log A^T) over key channels"""
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    return torch.softmax(logits + adjacency_log_bias(A, m_prior), dim=-1)


class AttentionBlock(nn.Module):
    """Post-norm multi-head self-attention + feed-forward; returns attention maps with the output"""

    def __init__(self, d_model: int, heads: int, ffn_mult: int = 2):
        super().__init__()
        if d_model % heads:
            raise InvalidArgumentError(f"heads={heads} must divide d_model={d_model}")
        self.heads = heads
        self.d_head = d_model // heads
        self.query = nn.Linear(d_model, d_model)
        self.key = nn.Linear(d_model, d_model)
        self.value = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(
            nn.Linear(d_model, d_model * ffn_mult),
            nn.GELU(),
            nn.Linear(d_model * ffn_mult, d_model),
        )

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        B, N, _ = x.shape
        return x.view(B, N, self.heads, self.d_head).transpose(1, 2)

    def forward(self, x: torch.Tensor, A: Optional[torch.Tensor] = None,
                m_prior: Optional[torch.Tensor] = None):
        """With an adjacency A, attention over tokens is biased by log A (channel tokens only)"""
        B, N, D = x.shape
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        if A is not None:
            attn = masked_attention_weights(q, k, A, m_prior)
        else:
            attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.d_head), dim=-1)
        context = (attn @ v).transpose(1, 2).reshape(B, N, D)
        x = self.norm1(x + self.out(context))
        x = self.norm2(x + self.ffn(x))
        return x, attn
