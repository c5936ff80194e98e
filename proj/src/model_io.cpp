// Copyright 2026 The tmfuse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tmf/model_io.hpp"

#include <sstream>

namespace tmf {

namespace {

std::string num(Scalar v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

Scalar to_scalar(const std::string& s) { return std::stod(s); }
Index to_index(const std::string& s) { return std::stoll(s); }

std::vector<Index> parse_index_list(const std::string& s) {
  std::vector<Index> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(std::stoll(item));
  return out;
}

std::string index_list(const std::vector<Index>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

void add_dense(ModelRecord& r, const std::string& prefix, DenseLayer& layer) {
  r.blocks.push_back({prefix + ".weight", layer.weight.value});
  r.blocks.push_back({prefix + ".bias", layer.bias.value});
}

DenseLayer dense_from(const ModelRecord& r, const std::string& prefix,
                      Activation act) {
  DenseLayer layer;
  layer.weight = Param("weight", r.block(prefix + ".weight").value);
  layer.bias = Param("bias", r.block(prefix + ".bias").value);
  layer.activation = act;
  return layer;
}

}  // namespace

HeadInput head_input_from_string(const std::string& s) {
  if (s == "vector") return HeadInput::kVector;
  if (s == "mean") return HeadInput::kMean;
  if (s == "frames") return HeadInput::kFrames;
  if (s == "windows") return HeadInput::kWindows;
  throw ConfigError(str("unknown head input '", s, "'"));
}

std::string to_string(HeadInput in) {
  switch (in) {
    case HeadInput::kVector: return "vector";
    case HeadInput::kMean: return "mean";
    case HeadInput::kFrames: return "frames";
    case HeadInput::kWindows: return "windows";
  }
  return "vector";
}

Index TrainedHead::descriptor_size() {
  if (auto* m = std::get_if<MlpHead>(&model)) return m->descriptor_size();
  if (auto* l = std::get_if<LstmHead>(&model)) return l->descriptor_size();
  return std::get<WindowHead>(model).hidden_size();
}

ModalityOutput TrainedHead::infer(const DescriptorSequence& sequence) {
  const Matrix& x = sequence.values;
  switch (input) {
    case HeadInput::kVector: {
      if (x.rows() != 1)
        throw DimensionError(str("head '", modality, "' expects a single ",
                                 "vector, got a sequence of ", x.rows()));
      return std::get<MlpHead>(model).infer(x.row(0).transpose());
    }
    case HeadInput::kMean:
      return std::get<MlpHead>(model).infer(x.colwise().mean().transpose());
    case HeadInput::kFrames:
      return std::get<LstmHead>(model).infer(x);
    case HeadInput::kWindows: {
      Matrix windows = window_descriptors(x, windowing);
      if (auto* l = std::get_if<LstmHead>(&model)) return l->infer(windows);
      return std::get<WindowHead>(model).infer(windows);
    }
  }
  throw ContractError("TrainedHead::infer: unreachable");
}

ModelRecord head_to_record(TrainedHead& head) {
  ModelRecord r;
  r.name = "head." + head.modality;
  r.hparams["input"] = to_string(head.input);
  r.hparams["window_length"] = str(head.windowing.window_length);
  r.hparams["stride"] = str(head.windowing.stride);
  if (auto* m = std::get_if<MlpHead>(&head.model)) {
    r.kind = "mlp-head";
    r.hparams["dropout_keep"] = num(m->dropout_keep);
    r.hparams["batchnorm"] = m->norm ? "1" : "0";
    add_dense(r, "fc1", m->fc1);
    add_dense(r, "fc2", m->fc2);
    if (m->norm) {
      r.hparams["bn_epsilon"] = num(m->norm->epsilon);
      r.hparams["bn_momentum"] = num(m->norm->momentum);
      r.blocks.push_back({"bn.gamma", m->norm->gamma.value});
      r.blocks.push_back({"bn.beta", m->norm->beta.value});
      r.blocks.push_back({"bn.running_mean", m->norm->running_mean});
      r.blocks.push_back({"bn.running_var", m->norm->running_var});
    }
  } else if (auto* l = std::get_if<LstmHead>(&head.model)) {
    r.kind = "lstm-head";
    r.hparams["bidirectional"] = l->lstm.options.bidirectional ? "1" : "0";
    r.hparams["layers"] = str(l->lstm.options.num_layers);
    r.hparams["max_length"] = str(l->lstm.options.max_length);
    r.hparams["dropout_keep"] = num(l->lstm.options.dropout_keep);
    for (std::size_t c = 0; c < l->lstm.cells.size(); ++c) {
      r.blocks.push_back({str("cell", c, ".w_input"),
                          l->lstm.cells[c].w_input.value});
      r.blocks.push_back({str("cell", c, ".w_hidden"),
                          l->lstm.cells[c].w_hidden.value});
      r.blocks.push_back({str("cell", c, ".bias"), l->lstm.cells[c].bias.value});
    }
    add_dense(r, "fc", l->fc);
    add_dense(r, "out", l->out);
  } else {
    WindowHead& w = std::get<WindowHead>(head.model);
    r.kind = "window-head";
    r.hparams["dropout_keep"] = num(w.dropout_keep);
    add_dense(r, "fc1", w.fc1);
    add_dense(r, "fc2", w.fc2);
  }
  return r;
}

TrainedHead head_from_record(const ModelRecord& record) {
  TrainedHead head;
  if (record.name.rfind("head.", 0) != 0)
    throw FormatError(str("'", record.name, "' is not a head record"));
  head.modality = record.name.substr(5);
  head.input = head_input_from_string(record.hparam("input"));
  head.windowing.window_length = to_index(record.hparam("window_length"));
  head.windowing.stride = to_index(record.hparam("stride"));
  if (record.kind == "mlp-head") {
    MlpHead m;
    m.fc1 = dense_from(record, "fc1", Activation::kNone);
    m.fc2 = dense_from(record, "fc2", Activation::kNone);
    m.dropout_keep = to_scalar(record.hparam("dropout_keep"));
    if (record.hparam("batchnorm") == "1") {
      BatchNorm bn(m.fc1.out_size(), to_scalar(record.hparam("bn_epsilon")),
                   to_scalar(record.hparam("bn_momentum")));
      bn.gamma.value = record.block("bn.gamma").value;
      bn.beta.value = record.block("bn.beta").value;
      bn.running_mean = record.block("bn.running_mean").value.row(0);
      bn.running_var = record.block("bn.running_var").value.row(0);
      m.norm = std::move(bn);
    }
    head.model = std::move(m);
  } else if (record.kind == "lstm-head") {
    LstmHead l;
    l.lstm.options.bidirectional = record.hparam("bidirectional") == "1";
    l.lstm.options.num_layers = static_cast<int>(to_index(record.hparam("layers")));
    l.lstm.options.max_length = to_index(record.hparam("max_length"));
    l.lstm.options.dropout_keep = to_scalar(record.hparam("dropout_keep"));
    int cells = l.lstm.options.num_layers *
                (l.lstm.options.bidirectional ? 2 : 1);
    for (int c = 0; c < cells; ++c) {
      LstmCell cell;
      cell.w_input = Param("w_input", record.block(str("cell", c, ".w_input")).value);
      cell.w_hidden =
          Param("w_hidden", record.block(str("cell", c, ".w_hidden")).value);
      cell.bias = Param("bias", record.block(str("cell", c, ".bias")).value);
      l.lstm.cells.push_back(std::move(cell));
    }
    l.fc = dense_from(record, "fc", Activation::kRelu);
    l.out = dense_from(record, "out", Activation::kNone);
    head.model = std::move(l);
  } else if (record.kind == "window-head") {
    WindowHead w;
    w.fc1 = dense_from(record, "fc1", Activation::kRelu);
    w.fc2 = dense_from(record, "fc2", Activation::kNone);
    w.dropout_keep = to_scalar(record.hparam("dropout_keep"));
    head.model = std::move(w);
  } else {
    throw FormatError(str("unknown head kind '", record.kind, "'"));
  }
  return head;
}

ModelRecord moddrop_to_record(const ModDropFusion& model) {
  ModelRecord r;
  r.name = "fusion.moddrop";
  r.kind = "moddrop";
  r.hparams["input_dims"] = index_list(model.input_dims);
  r.hparams["hidden_split"] = index_list(model.hidden_split);
  r.hparams["drop_probability"] = num(model.drop_probability);
  r.blocks.push_back({"w1", model.w1.value});
  r.blocks.push_back({"b1", model.b1.value});
  r.blocks.push_back({"w2", model.w2.value});
  r.blocks.push_back({"b2", model.b2.value});
  return r;
}

ModDropFusion moddrop_from_record(const ModelRecord& record) {
  ModDropFusion model;
  model.input_dims = parse_index_list(record.hparam("input_dims"));
  model.hidden_split = parse_index_list(record.hparam("hidden_split"));
  model.drop_probability = to_scalar(record.hparam("drop_probability"));
  model.w1 = Param("w1", record.block("w1").value);
  model.b1 = Param("b1", record.block("b1").value);
  model.w2 = Param("w2", record.block("w2").value);
  model.b2 = Param("b2", record.block("b2").value);
  return model;
}

ModelRecord score_tree_to_record(ScoreTreeFusion& model) {
  ModelRecord r;
  r.name = "fusion.score_tree";
  r.kind = "score-tree";
  std::vector<Index> dims;
  for (DenseLayer& l : model.feature_classifiers) dims.push_back(l.in_size());
  r.hparams["descriptor_dims"] = index_list(dims);
  for (std::size_t k = 0; k < model.feature_classifiers.size(); ++k) {
    add_dense(r, str("feature", k), model.feature_classifiers[k]);
    add_dense(r, str("mixer", k), model.mixers[k]);
  }
  add_dense(r, "final", model.final_classifier);
  return r;
}

ScoreTreeFusion score_tree_from_record(const ModelRecord& record) {
  ScoreTreeFusion model;
  auto dims = parse_index_list(record.hparam("descriptor_dims"));
  for (std::size_t k = 0; k < dims.size(); ++k) {
    model.feature_classifiers.push_back(
        dense_from(record, str("feature", k), Activation::kNone));
    model.mixers.push_back(
        dense_from(record, str("mixer", k), Activation::kNone));
  }
  model.final_classifier = dense_from(record, "final", Activation::kNone);
  return model;
}

ModelRecord weighted_mean_to_record(const Vector& lambda) {
  ModelRecord r;
  r.name = "fusion.weighted_mean";
  r.kind = "weighted-mean";
  r.blocks.push_back({"lambda", lambda});
  return r;
}

Vector weighted_mean_from_record(const ModelRecord& record) {
  return record.block("lambda").value.col(0);
}

TrainedHead& ExperimentBundle::head(const std::string& modality) {
  for (TrainedHead& h : heads)
    if (h.modality == modality) return h;
  throw ContractError(str("bundle has no head for modality '", modality, "'"));
}

void save_bundle(const std::string& path, ExperimentBundle& bundle) {
  std::vector<ModelRecord> records;
  ModelRecord meta;
  meta.name = "experiment";
  meta.kind = "meta";
  std::string modalities;
  for (std::size_t i = 0; i < bundle.heads.size(); ++i)
    modalities += (i ? "," : "") + bundle.heads[i].modality;
  meta.hparams["modalities"] = modalities;
  meta.hparams["fusion"] = bundle.fusion_method;
  records.push_back(std::move(meta));
  for (TrainedHead& h : bundle.heads) records.push_back(head_to_record(h));
  if (bundle.fusion_method == "moddrop")
    records.push_back(moddrop_to_record(bundle.moddrop));
  else if (bundle.fusion_method == "score-tree")
    records.push_back(score_tree_to_record(bundle.score_tree));
  else if (bundle.fusion_method == "weighted-mean")
    records.push_back(weighted_mean_to_record(bundle.weighted_mean_lambda));
  write_checkpoint(path, records);
}

ExperimentBundle load_bundle(const std::string& path) {
  auto records = read_checkpoint(path);
  ExperimentBundle bundle;
  bundle.fusion_method = "none";
  std::vector<std::string> order;
  for (const ModelRecord& r : records) {
    if (r.kind == "meta") {
      bundle.fusion_method = r.hparam("fusion");
      std::istringstream is(r.hparam("modalities"));
      std::string name;
      while (std::getline(is, name, ','))
        if (!name.empty()) order.push_back(name);
    } else if (r.kind == "moddrop") {
      bundle.moddrop = moddrop_from_record(r);
    } else if (r.kind == "score-tree") {
      bundle.score_tree = score_tree_from_record(r);
    } else if (r.kind == "weighted-mean") {
      bundle.weighted_mean_lambda = weighted_mean_from_record(r);
    } else if (r.name.rfind("head.", 0) == 0) {
      bundle.heads.push_back(head_from_record(r));
    } else {
      throw FormatError(str("'", path, "': unexpected record '", r.name,
                            "' of kind '", r.kind, "'"));
    }
  }
  // Restore the declared modality order.
  if (!order.empty()) {
    std::vector<TrainedHead> sorted;
    for (const std::string& name : order)
      sorted.push_back(std::move(bundle.head(name)));
    bundle.heads = std::move(sorted);
  }
  return bundle;
}

}  // namespace tmf
