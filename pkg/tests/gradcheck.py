"""Central finite-difference oracle for network gradients (test helper)."""

import numpy as np
import torch

from maskflow.model import Architecture, flat_parameters, init_network, loss_and_grad, set_flat_parameters


def tiny_problem(seed=0, backbone="conv"):
    arch = Architecture(backbone=backbone, width=4, depth=1, embed_dim=2, modes=2, zero_head=False,
                        interp_scales=(1.0,))
    net = init_network(arch, seed, dtype=torch.float64)
    g = torch.Generator().manual_seed(seed)
    shape = (2, 2, 6, 6)
    masks = torch.rand(shape, generator=g) < 0.5
    target = torch.randn(shape, generator=g, dtype=torch.float64)
    cond = masks & (torch.rand(shape, generator=g) < 0.7)
    states = torch.randn(shape, generator=g, dtype=torch.float64) * cond
    t = torch.rand(2, generator=g, dtype=torch.float64)
    return net, (states, target * cond, cond, t), target, masks


def max_relative_fd_error(net, inputs, target, masks, n_coords=120, step=1e-5, seed=0):
    """Largest ``|analytic - fd| / (|analytic| + 1e-8)`` over random parameter coordinates."""
    _, grad = loss_and_grad(net, inputs, target, masks)
    theta = flat_parameters(net)
    rng = np.random.default_rng(seed)
    coords = rng.choice(theta.size, size=min(n_coords, theta.size), replace=False)
    worst = 0.0
    for i in coords:
        vals = []
        for sgn in (1, -1):
            th = theta.copy()
            th[i] += sgn * step
            set_flat_parameters(net, th)
            vals.append(loss_and_grad(net, inputs, target, masks)[0])
        fd = (vals[0] - vals[1]) / (2 * step)
        worst = max(worst, abs(grad[i] - fd) / (abs(grad[i]) + 1e-8))
    set_flat_parameters(net, theta)
    return worst, len(coords)
