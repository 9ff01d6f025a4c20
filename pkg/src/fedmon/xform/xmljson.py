"""Structure-preserving XML to JSON conversion.

Mapping::

    <e/>                          {"e": null}
    <e>text</e>                   {"e": "text"}
    <e a="v"/>                    {"e": {"@a": "v"}}
    <e a="v">text</e>             {"e": {"@a": "v", "#text": "text"}}
    <e><c/><c/></e>               {"e": {"c": [null, null]}}

Qualified names keep their prefix (``gl:Job`` stays ``gl:Job``); namespace
declarations pass through as ordinary ``@xmlns:*`` attributes.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from xml.parsers import expat

from ..core import Document

ATTR_PREFIX = "@"
TEXT_KEY = "#text"


class XmlError(ValueError):
    pass


def parse_xml(text: str | bytes) -> ET.Element:
    """Parse without namespace expansion so prefixes survive."""
    builder = ET.TreeBuilder()
    parser = expat.ParserCreate()
    parser.buffer_text = True
    parser.ordered_attributes = False
    parser.StartElementHandler = builder.start
    parser.EndElementHandler = builder.end
    parser.CharacterDataHandler = builder.data
    try:
        parser.Parse(text, True)
    except expat.ExpatError as exc:
        raise XmlError(f"malformed XML: {exc}") from None
    return builder.close()


def _text_of(elem: ET.Element) -> str:
    parts = [elem.text or ""]
    parts.extend(child.tail or "" for child in elem)
    return " ".join(p.strip() for p in parts if p.strip())


def element_value(elem: ET.Element) -> Document:
    text = _text_of(elem)
    if not elem.attrib and len(elem) == 0:
        return text or None
    obj: dict = {}
    for name, value in elem.attrib.items():
        obj[ATTR_PREFIX + name] = value
    for child in elem:
        value = element_value(child)
        if child.tag in obj:
            prev = obj[child.tag]
            if isinstance(prev, _Repeated):
                prev.append(value)
            else:
                obj[child.tag] = _Repeated([prev, value])
        else:
            obj[child.tag] = value
    if text:
        obj[TEXT_KEY] = text
    for k, v in obj.items():
        if isinstance(v, _Repeated):
            obj[k] = list(v)
    return obj


class _Repeated(list):
    """Marks arrays built from repeated siblings (vs. a single child)."""


def xml_to_json(tree: ET.Element | str | bytes) -> dict:
    """Convert an element (or XML text) to ``{root_tag: value}``."""
    if isinstance(tree, (str, bytes)):
        tree = parse_xml(tree)
    return {tree.tag: element_value(tree)}
