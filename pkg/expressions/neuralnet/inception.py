"""InceptionTime on top of the numpy kernels.

Parameters are named ``block{i}.<layer>.<param>`` and ``head.<param>``; that
order (blocks first, then the head) is the checkpoint layout.
"""
import logging

import numpy as np
from django.core.exceptions import ValidationError

from . import kernels

logger = logging.getLogger(__name__)

DEFAULT_DEPTH = 6
DEFAULT_FILTERS = 32
DEFAULT_BOTTLENECK = 32
DEFAULT_KERNELS = (10, 20, 40)
DEFAULT_RESIDUAL_EVERY = 3


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self._cache = None

    def zero_grad(self):
        self.grads = {name: np.zeros_like(value) for name, value in self.params.items()}


class Conv1d(Layer):
    def __init__(self, in_channels, out_channels, kernel_size, rng, bias=False):
        super().__init__()
        fan_in = in_channels * kernel_size
        self.params['weight'] = _he_uniform(rng, (out_channels, in_channels, kernel_size), fan_in)
        if bias:
            self.params['bias'] = np.zeros(out_channels)
        self.zero_grad()

    def forward(self, x):
        out, self._cache = kernels.conv1d_forward(x, self.params['weight'], self.params.get('bias'))
        return out

    def backward(self, grad_out):
        grad_x, grad_w, grad_b = kernels.conv1d_backward(grad_out, self._cache)
        self.grads['weight'] += grad_w
        if grad_b is not None:
            self.grads['bias'] += grad_b
        return grad_x


class BatchNorm1d(Layer):
    def __init__(self, channels):
        super().__init__()
        self.params['gamma'] = np.ones(channels)
        self.params['beta'] = np.zeros(channels)
        self.buffers['running_mean'] = np.zeros(channels)
        self.buffers['running_var'] = np.ones(channels)
        self.zero_grad()

    def forward(self, x, training, update_stats=True):
        out, self._cache, (mean, var) = kernels.batchnorm_forward(
            x, self.params['gamma'], self.params['beta'],
            self.buffers['running_mean'], self.buffers['running_var'], training,
        )
        if training and update_stats:
            self.buffers['running_mean'] = mean
            self.buffers['running_var'] = var
        return out

    def backward(self, grad_out):
        grad_x, grad_gamma, grad_beta = kernels.batchnorm_backward(grad_out, self._cache)
        self.grads['gamma'] += grad_gamma
        self.grads['beta'] += grad_beta
        return grad_x


class Linear(Layer):
    def __init__(self, in_features, out_features, rng):
        super().__init__()
        self.params['weight'] = _he_uniform(rng, (out_features, in_features), in_features)
        self.params['bias'] = np.zeros(out_features)
        self.zero_grad()

    def forward(self, x):
        out, self._cache = kernels.linear_forward(x, self.params['weight'], self.params['bias'])
        return out

    def backward(self, grad_out):
        grad_x, grad_w, grad_b = kernels.linear_backward(grad_out, self._cache)
        self.grads['weight'] += grad_w
        self.grads['bias'] += grad_b
        return grad_x


class InceptionModule:
    """Bottleneck, parallel convolutions plus a max-pool branch, concat, BN, ReLU."""

    def __init__(self, in_channels, n_filters, bottleneck, kernel_sizes, rng):
        self.bottleneck = Conv1d(in_channels, bottleneck, 1, rng) if in_channels > 1 and bottleneck else None
        branch_in = bottleneck if self.bottleneck else in_channels
        self.branches = [Conv1d(branch_in, n_filters, k, rng) for k in kernel_sizes]
        self.pool_conv = Conv1d(in_channels, n_filters, 1, rng)
        self.norm = BatchNorm1d(n_filters * (len(kernel_sizes) + 1))
        self._pool_cache = None
        self._mask = None

    def layers(self):
        named = [('bottleneck', self.bottleneck)] if self.bottleneck else []
        named += [(f'branch{i}', conv) for i, conv in enumerate(self.branches)]
        named += [('pool_conv', self.pool_conv), ('norm', self.norm)]
        return named

    def forward(self, x, training, update_stats):
        z = self.bottleneck.forward(x) if self.bottleneck else x
        outputs = [conv.forward(z) for conv in self.branches]
        pooled, self._pool_cache = kernels.maxpool3_forward(x)
        outputs.append(self.pool_conv.forward(pooled))
        y = self.norm.forward(np.concatenate(outputs, axis=1), training, update_stats)
        out, self._mask = kernels.relu_forward(y)
        return out

    def backward(self, grad_out):
        grad = self.norm.backward(kernels.relu_backward(grad_out, self._mask))
        parts = np.split(grad, len(self.branches) + 1, axis=1)
        grad_z = sum(conv.backward(part) for conv, part in zip(self.branches, parts))
        grad_x = kernels.maxpool3_backward(self.pool_conv.backward(parts[-1]), self._pool_cache)
        if self.bottleneck:
            return grad_x + self.bottleneck.backward(grad_z)
        return grad_x + grad_z


class Shortcut:
    def __init__(self, in_channels, out_channels, rng):
        self.conv = Conv1d(in_channels, out_channels, 1, rng)
        self.norm = BatchNorm1d(out_channels)

    def layers(self):
        return [('conv', self.conv), ('norm', self.norm)]

    def forward(self, x, training, update_stats):
        return self.norm.forward(self.conv.forward(x), training, update_stats)

    def backward(self, grad_out):
        return self.conv.backward(self.norm.backward(grad_out))


class InceptionBlock:
    """One inception module; blocks that close a residual group also own the shortcut."""

    def __init__(self, module, shortcut=None, group_start=False):
        self.module = module
        self.shortcut = shortcut
        self.group_start = group_start
        self.frozen = False
        self._mask = None

    def layers(self):
        named = [(f'module.{name}', layer) for name, layer in self.module.layers()]
        if self.shortcut:
            named += [(f'shortcut.{name}', layer) for name, layer in self.shortcut.layers()]
        return named


class InceptionTimeModel:
    def __init__(self, config, blocks, head):
        self.config = dict(config)
        self.blocks = blocks
        self.head = head
        self.check_finite = False
        self._gap_length = None

    @property
    def depth(self):
        return len(self.blocks)

    def named_layers(self):
        named = []
        for i, block in enumerate(self.blocks, start=1):
            named += [(f'block{i}.{name}', layer, block) for name, layer in block.layers()]
        named.append(('head', self.head, None))
        return named

    def parameters(self):
        return {f'{prefix}.{key}': layer.params[key]
                for prefix, layer, _ in self.named_layers() for key in layer.params}

    def gradients(self):
        return {f'{prefix}.{key}': layer.grads[key]
                for prefix, layer, _ in self.named_layers() for key in layer.params}

    def buffers(self):
        return {f'{prefix}.{key}': layer.buffers[key]
                for prefix, layer, _ in self.named_layers() for key in layer.buffers}

    def load_buffer(self, name, value):
        prefix, key = name.rsplit('.', 1)
        for layer_prefix, layer, _ in self.named_layers():
            if layer_prefix == prefix:
                layer.buffers[key] = value
                return
        raise KeyError(name)

    def frozen_names(self):
        return {f'{prefix}.{key}' for prefix, layer, block in self.named_layers()
                if block is not None and block.frozen for key in layer.params}

    @property
    def n_params(self):
        return sum(value.size for value in self.parameters().values())

    @property
    def frozen_blocks(self):
        return sum(block.frozen for block in self.blocks)

    def zero_grad(self):
        for _, layer, _ in self.named_layers():
            layer.zero_grad()

    def _check(self, name, array):
        if self.check_finite and not np.all(np.isfinite(array)):
            raise FloatingPointError(f'Non-finite values after {name}')

    def forward(self, x, training=False, update_stats=True):
        """Logits for a [B x C x T] batch. Frozen blocks always run in eval mode."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.config['input_channels']:
            raise ValidationError('Expected input [B x %(c)d x T], got %(shape)s',
                                  params={'c': self.config['input_channels'], 'shape': x.shape})
        residual = x
        for i, block in enumerate(self.blocks, start=1):
            block_training = training and not block.frozen
            x = block.module.forward(x, block_training, update_stats)
            if block.shortcut:
                pre = x + block.shortcut.forward(residual, block_training, update_stats)
                x, block._mask = kernels.relu_forward(pre)
                residual = x
            self._check(f'block{i}', x)
        pooled, self._gap_length = kernels.gap_forward(x)
        logits = self.head.forward(pooled)
        self._check('head', logits)
        return logits

    def backward(self, grad_logits):
        """Accumulate parameter gradients; stops at the frozen prefix."""
        grad = kernels.gap_backward(self.head.backward(grad_logits), self._gap_length)
        pending = None
        for block in reversed(self.blocks):
            if block.frozen:
                break
            if block.shortcut:
                grad = kernels.relu_backward(grad, block._mask)
                pending = block.shortcut.backward(grad)
            grad = block.module.backward(grad)
            if block.group_start and pending is not None:
                grad = grad + pending
                pending = None
        return grad

    def loss_and_grads(self, x, labels, update_stats=True):
        self.zero_grad()
        logits = self.forward(x, training=True, update_stats=update_stats)
        loss, probs, cache = kernels.softmax_ce_forward(logits, labels)
        self.backward(kernels.softmax_ce_backward(cache))
        return loss, probs

    def loss(self, x, labels, training=True):
        logits = self.forward(x, training=training, update_stats=False)
        return kernels.softmax_ce_forward(logits, labels)[0]

    def predict_proba(self, x):
        return kernels.softmax(self.forward(x, training=False))


def build_inception_time(input_channels=14, classes=3, *, depth=DEFAULT_DEPTH, n_filters=DEFAULT_FILTERS,
                         bottleneck=DEFAULT_BOTTLENECK, kernel_sizes=DEFAULT_KERNELS,
                         residual_every=DEFAULT_RESIDUAL_EVERY, seed=0):
    """He-uniform initialised InceptionTime; identical parameters for identical seeds."""
    if depth < 1 or classes < 2:
        raise ValidationError('InceptionTime needs depth >= 1 and at least 2 classes')
    rng = np.random.default_rng(seed)
    width = n_filters * (len(kernel_sizes) + 1)
    blocks = []
    channels = input_channels
    group_input = input_channels
    for d in range(depth):
        module = InceptionModule(channels, n_filters, bottleneck, kernel_sizes, rng)
        closes_group = bool(residual_every) and d % residual_every == residual_every - 1
        shortcut = Shortcut(group_input, width, rng) if closes_group else None
        starts_group = d == 0 or (blocks and blocks[-1].shortcut is not None)
        blocks.append(InceptionBlock(module, shortcut, group_start=bool(starts_group)))
        channels = width
        if closes_group:
            group_input = width
    head = Linear(width, classes, rng)
    config = {
        'input_channels': input_channels,
        'classes': classes,
        'depth': depth,
        'n_filters': n_filters,
        'bottleneck': bottleneck,
        'kernel_sizes': list(kernel_sizes),
        'residual_every': residual_every,
        'seed': seed,
    }
    model = InceptionTimeModel(config, blocks, head)
    logger.debug('Built InceptionTime depth=%d width=%d with %d parameters', depth, width, model.n_params)
    return model


def set_freeze(model, first_n_blocks):
    if not 0 <= first_n_blocks <= model.depth:
        raise ValidationError('Can freeze between 0 and %(d)d blocks', params={'d': model.depth})
    for i, block in enumerate(model.blocks):
        block.frozen = i < first_n_blocks
    return model
