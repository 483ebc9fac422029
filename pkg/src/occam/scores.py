"""Contrastive (InfoNCE) and similarity scores, plus the training losses.

All functions are pure and differentiable; embeddings are l2-normalized
internally, never stored normalized. The query branch carries gradients,
positives/negatives are expected to be detached by the caller when a
stop-gradient target is intended.
"""

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class ScoreConfig:
    """Temperature for the contrastive score."""

    tau: float = 0.2

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")


def _unit(x: torch.Tensor) -> torch.Tensor:
    norms = x.detach().norm(dim=-1)
    if (norms == 0).any():
        raise ValueError("cannot take cosine similarity of a zero vector")
    return x / x.norm(dim=-1, keepdim=True)


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of two vectors; scale-invariant in each argument."""
    return (_unit(a) * _unit(b)).sum(dim=-1)


def similarity_score(query: torch.Tensor, positive: torch.Tensor) -> torch.Tensor:
    """Similarity score: cosine of the online output and its momentum target."""
    return cosine_similarity(query, positive)


def contrastive_score(
    query: torch.Tensor,
    positive: torch.Tensor,
    negatives,
    cfg: ScoreConfig = ScoreConfig(),
) -> torch.Tensor:
    """Log-ratio of the positive pair term to the sum over all pairs.

    Returns log[ e^{sim(q,p)/tau} / (e^{sim(q,p)/tau} + sum_n e^{sim(q,n)/tau}) ],
    which is always <= 0 and exactly 0 when there are no negatives.
    `negatives` is a sequence of vectors or an (N, d) tensor, possibly empty.
    """
    q = _unit(query)
    pos = (q * _unit(positive)).sum(dim=-1, keepdim=True) / cfg.tau
    if isinstance(negatives, torch.Tensor):
        neg_stack = negatives
    else:
        negatives = list(negatives)
        if not negatives:
            return pos.squeeze(0) - torch.logsumexp(pos, dim=0)
        neg_stack = torch.stack(negatives)
    if neg_stack.numel() == 0:
        return pos.squeeze(0) - torch.logsumexp(pos, dim=0)
    neg = (_unit(neg_stack) @ q) / cfg.tau
    logits = torch.cat([pos, neg])
    return pos.squeeze(0) - torch.logsumexp(logits, dim=0)


def batch_contrastive_scores(
    queries: torch.Tensor,
    positives: torch.Tensor,
    negative_batches,
    cfg: ScoreConfig = ScoreConfig(),
    exclude_own_index: bool = False,
) -> torch.Tensor:
    """Per-sample contrastive scores for a batch against shared negative batches.

    `negative_batches` is a list of (b, d) tensors; with `exclude_own_index`
    each query skips its own row in every batch (the sample never serves as
    its own negative across masking iterations).
    """
    if queries.shape[0] == 0:
        raise ValueError("empty query batch")
    q = _unit(queries)
    pos = (q * _unit(positives)).sum(dim=-1, keepdim=True) / cfg.tau
    cols = [pos]
    for bank in negative_batches:
        if bank.shape[0] == 0:
            continue
        sims = (q @ _unit(bank).t()) / cfg.tau
        if exclude_own_index:
            if bank.shape[0] != queries.shape[0]:
                raise ValueError("own-index exclusion needs equally sized batches")
            sims = sims - torch.diag(torch.full((bank.shape[0],), torch.inf, dtype=sims.dtype))
        cols.append(sims)
    logits = torch.cat(cols, dim=1)
    return pos.squeeze(1) - torch.logsumexp(logits, dim=1)


def moco_loss(
    queries: torch.Tensor,
    keys: torch.Tensor,
    queue: torch.Tensor,
    cfg: ScoreConfig = ScoreConfig(),
) -> torch.Tensor:
    """Mean over the batch of the negated contrastive score against the queue."""
    if queries.shape[0] == 0:
        raise ValueError("empty batch")
    if queue.shape[0] == 0:
        raise ValueError("empty queue")
    scores = batch_contrastive_scores(queries, keys, [queue], cfg)
    return -scores.mean()


def byol_loss(queries: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean of 2 - 2*cos(query, target) over paired rows.

    The training loop passes both view orderings (predictions of view one
    against targets of view two and vice versa) concatenated row-wise.
    """
    if queries.shape[0] == 0:
        raise ValueError("empty batch")
    sims = (_unit(queries) * _unit(targets)).sum(dim=-1)
    return (2.0 - 2.0 * sims).mean()
