"""
Checkpoint container.

Layout:
    8-byte magic  b"LTCKPT1\\n"
    8-byte little-endian header length
    UTF-8 JSON header (sorted keys): specs, input_shape, seed, tensor table, extras table, metadata
    tensor payloads as 64-bit little-endian floats, in header order

Identical networks and metadata always produce identical bytes.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.exceptions import BadArgumentError, DataError
from src.numerics.layers import LayerSpec
from src.numerics.network import Network
from src.numerics.tensor import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"LTCKPT1\n"


def _finite_parameters(net: Network) -> Dict[str, np.ndarray]:
    parameters = {}
    for name, tensor in net.parameters().items():
        tensor.require_finite(name)
        parameters[name] = tensor.data.copy()
    return parameters


@dataclass
class Checkpoint:
    """
    Everything needed to rebuild a trained network.

    Attributes:
        specs (list): LayerSpec list
        input_shape (tuple): Per-sample input shape
        seed (int): Initialization seed
        parameters (dict): Parameter name -> array
        extras (dict): Auxiliary arrays stored alongside (e.g. the threshold model)
        metadata (dict): JSON-serializable run information (head, label names, ...)
    """
    specs: List[LayerSpec]
    input_shape: Tuple[int, ...]
    seed: int
    parameters: Dict[str, np.ndarray]
    extras: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_network(cls, net: Network, extras: Optional[Dict[str, np.ndarray]] = None,
                     metadata: Optional[Dict[str, Any]] = None) -> "Checkpoint":
        return cls(
            specs=list(net.specs),
            input_shape=tuple(net.input_shape),
            seed=net.seed,
            parameters=_finite_parameters(net),
            extras={k: np.asarray(v, dtype=np.float64).copy() for k, v in (extras or {}).items()},
            metadata=dict(metadata or {}),
        )

    def to_network(self) -> Network:
        net = Network(self.specs, self.input_shape, self.seed)
        net.load_parameters(self.parameters)
        return net

    def to_bytes(self) -> bytes:
        tensor_table = [{"name": k, "shape": list(v.shape)} for k, v in self.parameters.items()]
        extras_table = [{"name": k, "shape": list(np.shape(v))} for k, v in sorted(self.extras.items())]
        header = {
            "specs": [spec.to_dict() for spec in self.specs],
            "input_shape": list(self.input_shape),
            "seed": self.seed,
            "tensors": tensor_table,
            "extras": extras_table,
            "metadata": self.metadata,
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        chunks = [MAGIC, np.array([len(header_bytes)], dtype="<u8").tobytes(), header_bytes]
        for entry in tensor_table:
            chunks.append(Tensor(self.parameters[entry["name"]]).to_le_bytes())
        for entry in extras_table:
            chunks.append(np.asarray(self.extras[entry["name"]], dtype="<f8").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, payload: bytes) -> "Checkpoint":
        if payload[:len(MAGIC)] != MAGIC:
            raise DataError("Not a checkpoint file (bad magic)")
        offset = len(MAGIC)
        if len(payload) < offset + 8:
            raise DataError("Checkpoint truncated before the header")
        header_len = int(np.frombuffer(payload[offset:offset + 8], dtype="<u8")[0])
        offset += 8
        try:
            header = json.loads(payload[offset:offset + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"Checkpoint header is corrupted: {e}")
        offset += header_len

        def read_table(table, decode):
            nonlocal offset
            arrays = {}
            for entry in table:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                end = offset + 8 * count
                if end > len(payload):
                    raise DataError(f"Checkpoint truncated while reading {entry['name']}")
                arrays[entry["name"]] = decode(payload[offset:end], shape)
                offset = end
            return arrays

        try:
            parameters = read_table(header["tensors"], lambda chunk, shape: Tensor.from_le_bytes(chunk, shape).data)
        except BadArgumentError as e:
            raise DataError(f"Checkpoint tensor table is corrupted: {e}")
        extras = read_table(header.get("extras", []),
                            lambda chunk, shape: np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape))
        return cls(
            specs=[LayerSpec.from_dict(spec) for spec in header["specs"]],
            input_shape=tuple(header["input_shape"]),
            seed=int(header["seed"]),
            parameters=parameters,
            extras=extras,
            metadata=header.get("metadata", {}),
        )


def save_checkpoint(path: str, net: Network, extras: Optional[Dict[str, np.ndarray]] = None,
                    metadata: Optional[Dict[str, Any]] = None) -> Checkpoint:
    """
    Write a network and its companions to a checkpoint file.

    Args:
        path (str): Destination file
        net (Network): Network to store
        extras (dict, optional): Additional named arrays
        metadata (dict, optional): JSON-serializable run information

    Returns:
        Checkpoint: The stored checkpoint
    """
    checkpoint = Checkpoint.from_network(net, extras, metadata)
    write_checkpoint(path, checkpoint)
    return checkpoint


def write_checkpoint(path: str, checkpoint: Checkpoint):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(checkpoint.to_bytes())
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise DataError(f"Checkpoint file '{path}' not found")
    with open(path, "rb") as f:
        return Checkpoint.from_bytes(f.read())
