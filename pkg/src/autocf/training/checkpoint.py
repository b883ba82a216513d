import json
import logging
import os
from typing import Any, Dict, Tuple

import numpy as np

from ..constants import CHECKPOINT_FORMAT_VERSION
from ..exceptions import CheckpointNotFoundError, ConfigError
from ..model.autocf import ModelState
from ..model.decoder import AttentionParams
from ..tensor import AdamState, Tensor

logger = logging.getLogger(__name__)

META_FILE = 'meta.json'


def save_checkpoint(state: ModelState, config: Dict[str, Any], directory: str) -> str:
    """Write parameters, Adam moments and metadata as a directory of .npy files.

    Identical states produce byte-identical directories.

    Returns:
        The checkpoint directory
    """
    os.makedirs(directory, exist_ok=True)
    for name, param in state.parameters().items():
        np.save(os.path.join(directory, f"{name}.npy"), param.values)
        if name in state.adam.m:
            np.save(os.path.join(directory, f"adam_m_{name}.npy"), state.adam.m[name])
            np.save(os.path.join(directory, f"adam_v_{name}.npy"), state.adam.v[name])
    meta = {
        'format_version': CHECKPOINT_FORMAT_VERSION,
        'config': config,
        'step': state.step,
        'epoch': state.epoch,
        'heads': state.attention.heads,
        'adam': {'lr': state.adam.lr, 'beta1': state.adam.beta1, 'beta2': state.adam.beta2,
                 'eps': state.adam.eps, 'step': state.adam.step},
    }
    with open(os.path.join(directory, META_FILE), 'w') as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    logger.info(f"Saved checkpoint at step {state.step} to {directory}")
    return directory


def load_checkpoint(directory: str) -> Tuple[ModelState, Dict[str, Any]]:
    """Read a checkpoint written by `save_checkpoint`.

    Returns:
        (ModelState, resolved config mapping stored with it)
    """
    meta_path = os.path.join(directory, META_FILE)
    if not os.path.isfile(meta_path):
        raise CheckpointNotFoundError(f"checkpoint not found: {directory}")
    with open(meta_path) as f:
        meta = json.load(f)
    if meta.get('format_version') != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(f"unsupported checkpoint format {meta.get('format_version')!r}",
                          key='checkpoint')

    def load(name: str) -> np.ndarray:
        return np.load(os.path.join(directory, f"{name}.npy"))

    params = {name: Tensor(load(name), requires_grad=True, name=name)
              for name in ('ego', 'w_q', 'w_k', 'w_v')}
    adam_meta = meta['adam']
    adam = AdamState(lr=adam_meta['lr'], beta1=adam_meta['beta1'], beta2=adam_meta['beta2'],
                     eps=adam_meta['eps'], step=adam_meta['step'])
    for name in params:
        if os.path.exists(os.path.join(directory, f"adam_m_{name}.npy")):
            adam.m[name] = load(f"adam_m_{name}")
            adam.v[name] = load(f"adam_v_{name}")
    attention = AttentionParams(params['w_q'], params['w_k'], params['w_v'], meta['heads'])
    state = ModelState(params['ego'], attention, adam, meta['step'], meta['epoch'])
    return state, meta['config']
