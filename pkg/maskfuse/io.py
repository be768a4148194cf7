"""
Reading and writing of instance documents, PNG rasters and value grids.

Instance documents look like::

    {"width": W, "height": H, "instances": [
        {"id": 1, "class_id": 1, "score": 0.97, "polygon": [[x, y], ...]},
        {"id": 2, "class_id": 1, "mask_png": "<path, URI or base64>"}
    ]}

``mask_png`` values are resolved through :func:`from_uri`, so plain paths,
``file://`` URIs, embedded ``data:``/``base64://`` payloads and bare base64
PNG payloads all work. Relative paths are taken relative to the
document's directory.
"""
import json
import logging
import os.path as osp
import re
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy

from maskfuse.exceptions import DimensionMismatchError, InvalidUriError, \
    MalformedInputError
from maskfuse.fusion import Instance, InstanceSet
from maskfuse.impls.raster_element.array import RasterArrayElement
from maskfuse.impls.raster_element.file import RasterFileElement
from maskfuse.impls.raster_element.memory import RasterMemoryElement
from maskfuse.interfaces.raster_element import RasterElement, from_uri
from maskfuse.lossmath import GroundTruthMap, ProbabilityMap
from maskfuse.raster import BinaryMask, GrayImage, Polygon, RgbImage
from maskfuse.utils.file import safe_file_write
from maskfuse.utils.png import encode_png


LOG = logging.getLogger(__name__)

#: URI prefixes that are never treated as relative paths.
_URI_PREFIXES = ("data:", "base64://", "file://")

#: Standard alphabet base64 with padding, as written by ``base64.b64encode``.
_BARE_B64_RE = re.compile(r"^(?:[A-Za-z0-9+/]{4})+"
                          r"(?:[A-Za-z0-9+/]{2}==|[A-Za-z0-9+/]{3}=)?$")


###############################################################################
# JSON

def read_json(path: str) -> Any:
    """
    :raises MalformedInputError: File content is not valid JSON.
    :raises OSError: File cannot be read.
    """
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as ex:
            raise MalformedInputError("%s is not valid JSON: %s"
                                      % (path, ex)) from ex


def dump_json(doc: Any) -> bytes:
    """ Stable serialization: sorted keys, 2 space indent, final newline. """
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


def write_json(doc: Any, path: str) -> None:
    safe_file_write(path, dump_json(doc))


###############################################################################
# Rasters

def resolve_raster(ref: str, base_dir: Optional[str] = None) -> RasterElement:
    """
    Resolve a path, URI or bare base64 payload into a raster element.
    Relative paths are joined to ``base_dir`` when given. A reference that
    names no existing file and reads as padded base64 is decoded in memory.

    :raises InvalidUriError: Nothing resolves the reference.
    """
    if ref.startswith(_URI_PREFIXES):
        return from_uri(ref)
    path = ref
    if base_dir and not osp.isabs(ref):
        path = osp.join(base_dir, ref)
    if not osp.exists(path) and _BARE_B64_RE.match(ref):
        return RasterMemoryElement.from_base64(ref)
    return from_uri(path)


def load_mask(ref: str, base_dir: Optional[str] = None) -> BinaryMask:
    """
    Load a mask PNG: any nonzero sample is foreground.

    :raises MalformedInputError: Missing, empty or undecodable content.
    """
    elem = resolve_raster(ref, base_dir)
    if isinstance(elem, RasterFileElement) and not osp.isfile(elem.filepath):
        raise MalformedInputError("Mask file not found: %s" % elem.filepath)
    return elem.load_mask()


def save_mask(mask: BinaryMask, path: str) -> None:
    """ Write a single channel PNG with 255 for foreground. """
    safe_file_write(path, encode_png(mask.bits))


def load_image(path: str) -> Union[GrayImage, RgbImage]:
    """
    :raises MalformedInputError: Missing or undecodable file.
    """
    if not osp.isfile(path):
        raise MalformedInputError("Image file not found: %s" % path)
    arr = RasterFileElement(path).load_array()
    if arr.ndim == 2:
        return GrayImage(arr)
    return RgbImage(arr)


def save_image(img: Union[GrayImage, RgbImage], path: str) -> None:
    safe_file_write(path, encode_png(img.samples))


###############################################################################
# Instance documents

def _require(doc: Dict[str, Any], key: str, kind: type, where: str) -> Any:
    if key not in doc:
        raise MalformedInputError("%s is missing '%s'" % (where, key))
    value = doc[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise MalformedInputError("%s field '%s' must be an integer"
                                  % (where, key))
    if kind is not int and not isinstance(value, kind):
        raise MalformedInputError("%s field '%s' must be of type %s"
                                  % (where, key, kind.__name__))
    return value


def parse_instances(doc: Any, base_dir: Optional[str] = None) -> InstanceSet:
    """
    Build an instance set from a parsed instance document. Polygons are
    rasterized onto the document canvas.

    :raises MalformedInputError: Schema violations, undecodable masks or
        instances covering no pixel.
    :raises DimensionMismatchError: A mask PNG has another size than the
        document canvas.
    """
    if not isinstance(doc, dict):
        raise MalformedInputError("Instance document must be a JSON object")
    width = _require(doc, "width", int, "Instance document")
    height = _require(doc, "height", int, "Instance document")
    if width <= 0 or height <= 0:
        raise MalformedInputError("Canvas size must be positive, given %dx%d"
                                  % (width, height))
    entries = _require(doc, "instances", list, "Instance document")
    instances: List[Instance] = []
    for n, entry in enumerate(entries):
        where = "Instance entry %d" % n
        if not isinstance(entry, dict):
            raise MalformedInputError("%s must be a JSON object" % where)
        iid = _require(entry, "id", int, where)
        class_id = _require(entry, "class_id", int, where)
        score = entry.get("score")
        if score is not None and (isinstance(score, bool) or
                                  not isinstance(score, (int, float))):
            raise MalformedInputError("%s score must be a number" % where)
        has_poly, has_png = "polygon" in entry, "mask_png" in entry
        if has_poly == has_png:
            raise MalformedInputError("%s needs exactly one of 'polygon' or "
                                      "'mask_png'" % where)
        try:
            if has_poly:
                inst = Instance.from_polygon(iid, class_id,
                                             Polygon(entry["polygon"]),
                                             width, height, score)
            else:
                ref = _require(entry, "mask_png", str, where)
                mask = load_mask(ref, base_dir)
                if mask.shape != (height, width):
                    raise DimensionMismatchError((height, width), mask.shape)
                inst = Instance(iid, class_id, mask, score)
        except InvalidUriError as ex:
            raise MalformedInputError("%s mask reference could not be "
                                      "resolved: %s" % (where, ex.reason))
        except (ValueError, TypeError) as ex:
            if isinstance(ex, (DimensionMismatchError, MalformedInputError)):
                raise
            raise MalformedInputError("%s is invalid: %s" % (where, ex))
        instances.append(inst)
    try:
        return InstanceSet(width, height, instances)
    except ValueError as ex:
        if isinstance(ex, DimensionMismatchError):
            raise
        raise MalformedInputError(str(ex))


def read_instances(path: str) -> InstanceSet:
    return parse_instances(read_json(path),
                           osp.dirname(osp.abspath(path)))


def instances_to_json(iset: InstanceSet) -> Dict[str, Any]:
    """
    Serialize with masks embedded as PNG ``data:`` URIs, instances in the
    set's order.
    """
    entries = []
    for inst in iset:
        e: Dict[str, Any] = {
            "id": inst.id,
            "class_id": inst.class_id,
            "mask_png": RasterArrayElement.from_mask(inst.mask).to_data_uri(),
        }
        if inst.score is not None:
            e["score"] = inst.score
        entries.append(e)
    return {"width": iset.width, "height": iset.height, "instances": entries}


def write_instances(iset: InstanceSet, path: str) -> None:
    write_json(instances_to_json(iset), path)


###############################################################################
# Label and value maps

def load_labels(path: str) -> Tuple[numpy.ndarray, Optional[InstanceSet]]:
    """
    Load a class-id map. Instance documents (``.json``) are painted with
    :meth:`InstanceSet.to_label_map`; PNG files must be single channel with
    one class id per sample value.

    :return: Label map and the instance set when one was read.
    :raises MalformedInputError: Color PNG or undecodable content.
    """
    if path.lower().endswith(".json"):
        iset = read_instances(path)
        return iset.to_label_map(), iset
    img = load_image(path)
    if not isinstance(img, GrayImage):
        raise MalformedInputError("Label map %s must be a single channel PNG"
                                  % path)
    return img.samples.astype(numpy.int64), None


def _load_grid(path: str) -> numpy.ndarray:
    if path.lower().endswith(".json"):
        try:
            arr = numpy.array(read_json(path), dtype=numpy.float64)
        except (TypeError, ValueError) as ex:
            raise MalformedInputError("%s is not a numeric grid: %s"
                                      % (path, ex))
        if arr.ndim not in (2, 3):
            raise MalformedInputError("%s must hold a 2D or 3D grid" % path)
        return arr
    img = load_image(path)
    if not isinstance(img, GrayImage):
        raise MalformedInputError("%s must be a single channel PNG" % path)
    return img.samples.astype(numpy.float64)


def load_probability_map(path: str) -> ProbabilityMap:
    """
    JSON grids hold probabilities directly, ``(H, W)`` or ``(H, W, m)``.
    PNG samples are scaled from ``[0, 255]`` to ``[0, 1]``.

    :raises MalformedInputError: Values violate probability constraints.
    """
    arr = _load_grid(path)
    if not path.lower().endswith(".json"):
        arr = arr / 255.0
    try:
        return ProbabilityMap(arr)
    except ValueError as ex:
        raise MalformedInputError("%s: %s" % (path, ex))


def load_target_map(path: str, classes: int) -> GroundTruthMap:
    """
    JSON grids of 0/1 targets are used as given. A 2D JSON grid for a
    multi-class problem is read as class indices and one-hot encoded. In
    PNG targets any nonzero sample is 1.

    :param classes: Class count of the matching probability map.
    :raises MalformedInputError: Values are not valid targets.
    """
    arr = _load_grid(path)
    try:
        if not path.lower().endswith(".json"):
            return GroundTruthMap(arr != 0)
        if arr.ndim == 2 and classes > 1:
            if not numpy.array_equal(arr, numpy.rint(arr)):
                raise ValueError("Class indices must be integers")
            return GroundTruthMap.from_labels(arr.astype(numpy.int64),
                                              classes)
        return GroundTruthMap(arr)
    except ValueError as ex:
        raise MalformedInputError("%s: %s" % (path, ex))
