"""
Where the parameters live
=========================

Prints the per-layer parameter table of the default eleven-layer model,
then searches small width grids for a stack whose counts hit 42,180
trainable and 42,182 total parameters.
"""

from bilstm_ids import accounting
from bilstm_ids.model import ModelConfig, build_model, count_params

cfg = ModelConfig(input_features=15)
model = build_model(cfg)
for name, desc, trainable, total in model.layer_param_counts():
    print(f"{name:<8} {desc:<42} {trainable:>7} {total:>7}")
print("total (trainable, all):", count_params(model))
print("closed form          :", accounting.closed_form_counts(cfg))

# The two non-trainable parameters must be batch-norm moving statistics,
# which pins the input width to a single feature.
result = accounting.search_widths()
print(result.explain_gap())
print(f"{result.evaluated} configurations tried, {len(result.matches)} match")
for match in result.matches[:5]:
    print("  bilstm", match.bilstm_hidden, "conv", match.conv_layers, match.conv_padding,
          "dense", match.dense_sizes, "classes", match.num_classes)
