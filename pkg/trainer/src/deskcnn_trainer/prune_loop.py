"""Iterative magnitude pruning with finetuning for DeskCNN."""

import torch

from deskcnn_trainer.model import DeskCNN
from deskcnn_trainer.train import train_model


def layer_sparsity(model: DeskCNN):
    out = {}
    for name in model.PRUNABLE:
        w = getattr(model, name).weight.detach()
        out[name] = (w == 0).float().mean().item()
    return out


def _prune_to(model, fraction):
    """Zero the smallest-magnitude `fraction` of each prunable layer's weights."""
    with torch.no_grad():
        for name in model.PRUNABLE:
            w = getattr(model, name).weight
            flat = w.abs().flatten()
            k = int(-(-fraction * flat.numel() // 1))  # ceil
            if k <= 0:
                continue
            # stable sort so equal magnitudes drop in flat-index order
            order = torch.argsort(flat, stable=True)
            mask = torch.ones_like(flat)
            mask[order[:k]] = 0.0
            w.mul_(mask.view_as(w))


def _mask_of(model):
    return {
        name: (getattr(model, name).weight.detach() != 0).float()
        for name in model.PRUNABLE
    }


def prune_and_finetune(
    model,
    data_dir,
    target_sparsity=0.4,
    steps=4,
    finetune_epochs=1,
    lr=1e-4,
    seed=0,
    label_smoothing=0.0,
    log=print,
):
    """Ramp sparsity up to `target_sparsity` over `steps` prune+finetune rounds."""
    for step in range(1, steps + 1):
        frac = target_sparsity * step / steps
        _prune_to(model, frac)
        masks = _mask_of(model)

        def reapply(m, masks=masks):
            with torch.no_grad():
                for name, mask in masks.items():
                    getattr(m, name).weight.mul_(mask)

        model, top1 = train_model(
            data_dir,
            epochs=finetune_epochs,
            lr=lr,
            seed=seed + step,
            model=model,
            mask_fn=reapply,
            label_smoothing=label_smoothing,
            log=log,
        )
        log(
            f"prune round {step}/{steps}: target {frac:.0%}, "
            f"sparsity {layer_sparsity(model)}, test top-1 {top1:.4%}"
        )
    return model, top1
