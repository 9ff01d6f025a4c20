"""Extract-transform-publish: XML/NetLogger conversion, synthetic sources, change detection."""

from .etp import (DEFAULT_EXCHANGE, EtpAdapter, SourceSnapshot, Updates, adapter_from_config,
                  detect_updates, run_etp_cycle, version_token)
from .netlogger import NetLoggerError, netlogger_to_json, parse_timestamp
from .sources import (GangliaSource, Glue2Source, IncaSource, NetLoggerSource, PerfsonarSource,
                      SnappSource, SyntheticSource, dump_source, make_source)
from .xmljson import XmlError, parse_xml, xml_to_json

__all__ = [
    "DEFAULT_EXCHANGE", "EtpAdapter", "GangliaSource", "Glue2Source", "IncaSource",
    "NetLoggerError", "NetLoggerSource", "PerfsonarSource", "SnappSource", "SourceSnapshot",
    "SyntheticSource", "Updates", "XmlError", "adapter_from_config", "detect_updates",
    "dump_source", "make_source", "netlogger_to_json", "parse_timestamp", "parse_xml",
    "run_etp_cycle", "version_token", "xml_to_json",
]
