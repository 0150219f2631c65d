#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>

#include "viqa/nn.hpp"

namespace viqa::nn {

namespace {

constexpr const char* kMagic = "VIQA-NN";

void write_f32_le(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  out.write(bytes, 4);
}

double read_f32_le(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw InputError("model payload truncated");
  const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return std::bit_cast<float>(bits);
}

bool has_space(const std::string& s) { return s.find_first_of(" \t\r\n") != std::string::npos; }

std::string next_line(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("model header truncated");
  return line;
}

}  // namespace

const std::string* Container::find_meta(const std::string& key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return &v;
  }
  return nullptr;
}

const Network* Container::find_network(const std::string& name) const {
  for (const auto& [n, net] : networks) {
    if (n == name) return &net;
  }
  return nullptr;
}

void write_container(std::ostream& out, const Container& container) {
  out << kMagic << ' ' << kContainerVersion << '\n';
  for (const auto& [key, value] : container.metadata) {
    if (key.empty() || has_space(key) || value.find('\n') != std::string::npos) {
      throw InputError("metadata key/value not representable: '" + key + "'");
    }
    out << "meta " << key << ' ' << value << '\n';
  }
  std::size_t floats = 0;
  for (const auto& [name, net] : container.networks) {
    if (name.empty() || has_space(name)) throw InputError("network name not representable: '" + name + "'");
    out << "network " << name << ' ' << net.layers().size() << '\n';
    for (const Layer& layer : net.layers()) {
      out << "layer " << layer_kind_name(layer.kind);
      for (int h : layer.hyper) out << ' ' << h;
      out << '\n';
    }
    floats += net.param_count();
  }
  out << "payload " << floats << '\n';
  for (const auto& entry : container.networks) {
    for (const Layer& layer : entry.second.layers()) {
      for (double v : layer.weights.data) write_f32_le(out, v);
      for (double v : layer.bias.data) write_f32_le(out, v);
    }
  }
  if (!out) throw InputError("failed writing model container");
}

Container read_container(std::istream& in) {
  Container c;
  {
    std::istringstream head(next_line(in));
    std::string magic;
    int version = 0;
    if (!(head >> magic >> version) || magic != kMagic) throw InputError("not a model container");
    if (version != kContainerVersion) {
      throw InputError("unsupported model container version " + std::to_string(version));
    }
  }
  std::size_t payload = 0;
  for (;;) {
    const std::string line = next_line(in);
    std::istringstream s(line);
    std::string tag;
    s >> tag;
    if (tag == "meta") {
      std::string key;
      s >> key;
      std::string value;
      std::getline(s, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      c.metadata.emplace_back(key, value);
    } else if (tag == "network") {
      std::string name;
      std::size_t count = 0;
      if (!(s >> name >> count)) throw InputError("malformed network line: " + line);
      std::vector<Layer> layers;
      for (std::size_t i = 0; i < count; ++i) {
        std::istringstream ls(next_line(in));
        std::string ltag, kind_name;
        ls >> ltag >> kind_name;
        if (ltag != "layer") throw InputError("expected layer line in network " + name);
        const LayerKind kind = parse_layer_kind(kind_name);
        std::vector<int> hyper;
        for (int h; ls >> h;) hyper.push_back(h);
        if (kind == LayerKind::dense) {
          if (hyper.size() != 2) throw InputError("dense layer needs 2 hyperparameters");
          layers.push_back(Layer::dense(hyper[0], hyper[1]));
        } else if (kind == LayerKind::conv2d) {
          if (hyper.size() != 4) throw InputError("conv2d layer needs 4 hyperparameters");
          layers.push_back(Layer::conv2d(hyper[0], hyper[1], hyper[2], hyper[3]));
        } else if (kind == LayerKind::local_mean_sub) {
          if (hyper.size() != 1) throw InputError("local_mean_sub layer needs 1 hyperparameter");
          layers.push_back(Layer::local_mean_sub(hyper[0]));
        } else {
          if (!hyper.empty()) throw InputError(kind_name + " layer takes no hyperparameters");
          layers.push_back(Layer::activation(kind));
        }
      }
      c.networks.emplace_back(name, Network(std::move(layers)));
    } else if (tag == "payload") {
      if (!(s >> payload)) throw InputError("malformed payload line");
      break;
    } else {
      throw InputError("unexpected header line: " + line);
    }
  }
  std::size_t expected = 0;
  for (const auto& entry : c.networks) expected += entry.second.param_count();
  if (expected != payload) throw InputError("payload size does not match the declared layers");
  for (auto& entry : c.networks) {
    for (Layer& layer : entry.second.layers()) {
      for (double& v : layer.weights.data) v = read_f32_le(in);
      for (double& v : layer.bias.data) v = read_f32_le(in);
    }
  }
  return c;
}

}  // namespace viqa::nn
