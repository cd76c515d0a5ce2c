#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace commnet {

enum class ControllerKind { Independent, FullyConnected, DiscreteComm, CommNet };
enum class CellKind { MLP, RNN, LSTM };
enum class EncoderKind { Lookup, OneHotLinear };

inline const char* to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::Independent: return "independent";
    case ControllerKind::FullyConnected: return "fully_connected";
    case ControllerKind::DiscreteComm: return "discrete";
    case ControllerKind::CommNet: return "commnet";
  }
  return "?";
}

inline const char* to_string(CellKind k) {
  switch (k) {
    case CellKind::MLP: return "mlp";
    case CellKind::RNN: return "rnn";
    case CellKind::LSTM: return "lstm";
  }
  return "?";
}

inline ControllerKind controller_kind_from(const std::string& s) {
  if (s == "independent") return ControllerKind::Independent;
  if (s == "fully_connected") return ControllerKind::FullyConnected;
  if (s == "discrete") return ControllerKind::DiscreteComm;
  if (s == "commnet") return ControllerKind::CommNet;
  throw std::invalid_argument("unknown controller kind: " + s);
}

inline CellKind cell_kind_from(const std::string& s) {
  if (s == "mlp") return CellKind::MLP;
  if (s == "rnn") return CellKind::RNN;
  if (s == "lstm") return CellKind::LSTM;
  throw std::invalid_argument("unknown cell kind: " + s);
}

/// Full structural specification of the controller.
struct ControllerConfig {
  ControllerKind kind = ControllerKind::CommNet;
  CellKind cell = CellKind::MLP;
  int comm_steps = 2;  // K
  int hidden = 50;     // d
  int cell_depth = 1;  // layers inside each MLP/RNN cell (1 or 2)
  bool skip_connections = false;
  bool linear_cells = false;  // identity nonlinearity, zero use of bias paths kept
  std::optional<int> local_range;  // communication range (CommNet only)
  bool temporal = false;  // carry hidden state across environment steps (RNN/LSTM)

  EncoderKind encoder = EncoderKind::OneHotLinear;
  int lookup_rows = 0;  // Lookup table entries
  int obs_dim = 0;      // OneHotLinear input width

  std::vector<int> action_dims = {2};  // one softmax head per entry
  int vocab = 0;         // discrete symbol count; 0 means hidden width
  int fixed_agents = 0;  // FullyConnected only: J pinned at construction
  int fc_width = 0;      // FullyConnected hidden width; 0 means parameter-match

  int symbol_vocab() const { return vocab > 0 ? vocab : hidden; }

  int comm_dim() const {
    return kind == ControllerKind::DiscreteComm ? symbol_vocab() : hidden;
  }

  /// Width of the extra encoder input slab: skip connections in the K-step
  /// regime, and the only observation pathway in the temporal regime.
  bool feeds_encoding_to_cells() const { return skip_connections || temporal; }

  int cell_input_dim() const {
    return hidden + comm_dim() + (feeds_encoding_to_cells() ? hidden : 0);
  }

  void validate() const {
    if (comm_steps < 1) throw std::invalid_argument("controller: K must be >= 1");
    if (hidden < 1) throw std::invalid_argument("controller: hidden width must be >= 1");
    if (cell_depth != 1 && cell_depth != 2)
      throw std::invalid_argument("controller: cell depth must be 1 or 2");
    if (local_range && kind != ControllerKind::CommNet)
      throw std::invalid_argument("controller: local_range is only valid with commnet");
    if (kind == ControllerKind::DiscreteComm && symbol_vocab() < 2)
      throw std::invalid_argument("controller: discrete comm needs vocab >= 2");
    if (temporal && cell == CellKind::MLP)
      throw std::invalid_argument("controller: temporal recurrence needs rnn or lstm cells");
    if (temporal && kind == ControllerKind::FullyConnected)
      throw std::invalid_argument("controller: fully_connected has no recurrent cells");
    if (kind == ControllerKind::FullyConnected && fixed_agents < 1)
      throw std::invalid_argument("controller: fully_connected needs fixed_agents >= 1");
    if (encoder == EncoderKind::Lookup && lookup_rows < 1)
      throw std::invalid_argument("controller: lookup encoder needs table rows");
    if (encoder == EncoderKind::OneHotLinear && obs_dim < 1)
      throw std::invalid_argument("controller: linear encoder needs obs_dim");
    if (action_dims.empty())
      throw std::invalid_argument("controller: at least one action head required");
    for (int a : action_dims)
      if (a < 1) throw std::invalid_argument("controller: head size must be >= 1");
  }
};

}  // namespace commnet
