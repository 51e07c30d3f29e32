// SONM model container.
//
//   "SONM" | u32 version (1) | u32 kind | u64 seed | payload
//
//   svm: u32 dim | f32 lambda | f32 bias | f32 w[dim]
//   rf:  u32 dim | u32 max_depth | u32 n_trees | per tree: u32 n_nodes, then
//        nodes in preorder; each node is u8 is_leaf followed by either
//        (u32 count0, u32 count1) or (u32 feature, f32 threshold)
//   mlp: u32 n_layers | per layer: u32 in, u32 out, f32 weight[out*in]
//        (row-major), f32 bias[out]
//
// All integers and floats little-endian.

#include <cstring>
#include <fstream>

#include "sonoscan/classifier.hpp"
#include "sonoscan/io.hpp"

namespace sonoscan {

namespace {

constexpr char kMagic[4] = {'S', 'O', 'N', 'M'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void put(T value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  void put_floats(const float* data, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}
  template <typename T>
  T get() {
    T value;
    in_.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in_) throw DataError(name_ + ": truncated model file");
    return value;
  }
  void get_floats(float* data, std::size_t n) {
    in_.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in_) throw DataError(name_ + ": truncated model file");
  }
  const std::string& name() const { return name_; }

 private:
  std::istream& in_;
  std::string name_;
};

struct PayloadWriter {
  Writer& w;

  void operator()(const LinearSvmModel& m) const {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.w.size()));
    w.put<float>(m.lambda);
    w.put<float>(m.b);
    w.put_floats(m.w.data(), m.w.size());
  }
  void operator()(const RandomForestModel& m) const {
    w.put<std::uint32_t>(m.dim);
    w.put<std::uint32_t>(m.max_depth);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.trees.size()));
    for (const auto& tree : m.trees) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(tree.nodes.size()));
      for (const auto& node : tree.nodes) {
        w.put<std::uint8_t>(node.leaf ? 1 : 0);
        if (node.leaf) {
          w.put<std::uint32_t>(node.count0);
          w.put<std::uint32_t>(node.count1);
        } else {
          w.put<std::uint32_t>(node.feature);
          w.put<float>(node.threshold);
        }
      }
    }
  }
  void operator()(const MlpModel& m) const {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m.layers().size()));
    for (const auto& layer : m.layers()) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.inputs()));
      w.put<std::uint32_t>(static_cast<std::uint32_t>(layer.outputs()));
      w.put_floats(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
      w.put_floats(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
  }
};

// Reads one subtree in preorder, fixing up right-child indices.
void read_subtree(Reader& r, DecisionTree& tree, std::uint32_t remaining_budget,
                  std::uint32_t dim) {
  if (tree.nodes.size() >= remaining_budget) throw DataError(r.name() + ": tree node count mismatch");
  TreeNode node;
  node.leaf = r.get<std::uint8_t>() != 0;
  if (node.leaf) {
    node.count0 = r.get<std::uint32_t>();
    node.count1 = r.get<std::uint32_t>();
    tree.nodes.push_back(node);
    return;
  }
  node.feature = r.get<std::uint32_t>();
  node.threshold = r.get<float>();
  if (node.feature >= dim) {
    throw DataError(r.name() + ": split feature " + std::to_string(node.feature) +
                    " >= dim " + std::to_string(dim));
  }
  const std::size_t self = tree.nodes.size();
  tree.nodes.push_back(node);
  read_subtree(r, tree, remaining_budget, dim);
  tree.nodes[self].right = static_cast<std::uint32_t>(tree.nodes.size());
  read_subtree(r, tree, remaining_budget, dim);
}

}  // namespace

void save_model(const std::filesystem::path& path, const Model& model, std::uint64_t seed) {
  io::AtomicFile file(path, /*binary=*/true);
  Writer w(file.stream());
  file.stream().write(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model_kind(model)));
  w.put<std::uint64_t>(seed);
  std::visit(PayloadWriter{w}, model);
  file.commit();
}

LoadedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError(path.string() + ": not a SONM model");
  Reader r(in, path.string());
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw DataError(path.string() + ": unsupported model version " + std::to_string(version));
  }
  const auto kind = r.get<std::uint32_t>();
  LoadedModel loaded;
  loaded.seed = r.get<std::uint64_t>();

  switch (static_cast<ModelKind>(kind)) {
    case ModelKind::svm: {
      LinearSvmModel m;
      const auto dim = r.get<std::uint32_t>();
      m.lambda = r.get<float>();
      m.b = r.get<float>();
      m.w.resize(dim);
      r.get_floats(m.w.data(), dim);
      loaded.model = std::move(m);
      break;
    }
    case ModelKind::rf: {
      RandomForestModel m;
      m.dim = r.get<std::uint32_t>();
      m.max_depth = r.get<std::uint32_t>();
      m.seed = loaded.seed;
      const auto n_trees = r.get<std::uint32_t>();
      for (std::uint32_t t = 0; t < n_trees; ++t) {
        DecisionTree tree;
        const auto n_nodes = r.get<std::uint32_t>();
        read_subtree(r, tree, n_nodes, m.dim);
        if (tree.nodes.size() != n_nodes) throw DataError(path.string() + ": tree node count mismatch");
        m.trees.push_back(std::move(tree));
      }
      loaded.model = std::move(m);
      break;
    }
    case ModelKind::mlp: {
      MlpModel m;
      const auto n_layers = r.get<std::uint32_t>();
      std::uint32_t previous_out = 0;
      for (std::uint32_t l = 0; l < n_layers; ++l) {
        const auto in_dim = r.get<std::uint32_t>();
        const auto out_dim = r.get<std::uint32_t>();
        if (l > 0 && in_dim != previous_out) throw DataError(path.string() + ": mlp layer shapes do not chain");
        previous_out = out_dim;
        DenseLayer<float> layer{RowMatrix<float>(out_dim, in_dim), ColVector<float>(out_dim)};
        r.get_floats(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        r.get_floats(layer.bias.data(), out_dim);
        m.layers().push_back(std::move(layer));
      }
      if (n_layers == 0 || previous_out != 1) throw DataError(path.string() + ": mlp must end in one output");
      loaded.model = std::move(m);
      break;
    }
    default:
      throw DataError(path.string() + ": unknown model kind " + std::to_string(kind));
  }
  return loaded;
}

}  // namespace sonoscan
