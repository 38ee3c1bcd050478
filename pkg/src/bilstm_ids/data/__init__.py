from .encoding import (FEATURE_NAMES, NUM_FEATURES, SCHEMA_VERSION, NormStats, SchemaError,
                       SequenceSet, build_sequences, encode_features, encode_matrix, fit_stats,
                       materialize, prepare_splits, window_indices)
from .flows import CSV_HEADER, FlowCsvError, extract_flows, load_flow_csv, save_flow_csv
from .pcap import PcapError, iter_pcap, parse_pcap, write_pcap
from .records import CLASS_NAMES, ClassLabel, FlowRecord, PacketRecord, Protocol
from .synth import SynthProfile, synth_generate

__all__ = [
    "CLASS_NAMES", "CSV_HEADER", "ClassLabel", "FEATURE_NAMES", "FlowCsvError", "FlowRecord",
    "NUM_FEATURES", "NormStats", "PacketRecord", "PcapError", "Protocol", "SCHEMA_VERSION",
    "SchemaError", "SequenceSet", "SynthProfile", "build_sequences", "encode_features",
    "encode_matrix", "extract_flows", "fit_stats", "iter_pcap", "load_flow_csv", "materialize",
    "parse_pcap", "prepare_splits", "save_flow_csv", "synth_generate", "window_indices",
    "write_pcap",
]
