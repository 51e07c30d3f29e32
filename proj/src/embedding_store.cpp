#include "sonoscan/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>
#include <unordered_set>

#include "sonoscan/io.hpp"

namespace sonoscan {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "embedding files are little-endian; big-endian hosts need byte swapping");

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
constexpr std::size_t kHeaderBytes = 4 + 8 + 4;

template <typename T>
T read_le(const unsigned char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  return value;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t count, std::uint32_t dim, std::vector<float> values)
    : count(count), dim(dim), data(std::move(values)) {
  if (data.size() != count * dim) {
    throw DataError("embedding data has " + std::to_string(data.size()) + " values, expected " +
                    std::to_string(count * dim));
  }
}

EmbeddingMatrix EmbeddingMatrix::select_rows(std::span<const std::size_t> rows) const {
  EmbeddingMatrix out(rows.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= count) throw DataError("row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(rows[i] * dim), dim,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  out.normalized = normalized;
  return out;
}

EmbeddingMatrix load_embeddings(const fs::path& path) {
  using Kind = EmbeddingFormatError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EmbeddingFormatError(Kind::io, "cannot open embedding file " + path.string());

  unsigned char header[kHeaderBytes];
  in.read(reinterpret_cast<char*>(header), kHeaderBytes);
  if (in.gcount() < 4 || std::memcmp(header, kMagic, 4) != 0) {
    throw EmbeddingFormatError(Kind::bad_magic, path.string() + ": missing EMB1 magic");
  }
  if (static_cast<std::size_t>(in.gcount()) < kHeaderBytes) {
    throw EmbeddingFormatError(Kind::truncated, path.string() + ": truncated header");
  }
  const auto count = read_le<std::uint64_t>(header + 4);
  const auto dim = read_le<std::uint32_t>(header + 12);
  if (dim == 0) throw EmbeddingFormatError(Kind::bad_header, path.string() + ": dim is zero");
  if (count > (std::uint64_t{1} << 62) / (4ull * dim)) {
    throw EmbeddingFormatError(Kind::bad_header, path.string() + ": count*dim overflows");
  }

  const std::uint64_t expected = 4ull * count * dim;
  const auto payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload = static_cast<std::uint64_t>(in.tellg() - payload_start);
  if (payload != expected) {
    throw EmbeddingFormatError(Kind::truncated, path.string() + ": payload is " +
                                                    std::to_string(payload) + " bytes, expected " +
                                                    std::to_string(expected));
  }
  in.seekg(payload_start);

  EmbeddingMatrix m(static_cast<std::size_t>(count), dim);
  in.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(expected));
  if (static_cast<std::uint64_t>(in.gcount()) != expected) {
    throw EmbeddingFormatError(Kind::truncated, path.string() + ": short read");
  }
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    if (!std::isfinite(m.data[i])) {
      throw EmbeddingFormatError(Kind::non_finite,
                                 path.string() + ": non-finite value at row " +
                                     std::to_string(i / dim) + ", column " +
                                     std::to_string(i % dim));
    }
  }
  return m;
}

void save_embeddings(const fs::path& path, const EmbeddingMatrix& matrix) {
  io::AtomicFile file(path, /*binary=*/true);
  auto& out = file.stream();
  const std::uint64_t count = matrix.count;
  const std::uint32_t dim = matrix.dim;
  out.write(kMagic, 4);
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
  out.write(reinterpret_cast<const char*>(matrix.data.data()),
            static_cast<std::streamsize>(matrix.data.size() * sizeof(float)));
  file.commit();
}

double dot(std::span<const float> a, std::span<const float> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * b[i];
  return sum;
}

EmbeddingMatrix normalize(EmbeddingMatrix matrix) {
  for (std::size_t r = 0; r < matrix.count; ++r) {
    auto row = matrix.row(r);
    double sq = 0.0;
    for (float v : row) {
      if (!std::isfinite(v)) throw DataError("non-finite value in row " + std::to_string(r));
      sq += static_cast<double>(v) * v;
    }
    if (sq == 0.0) throw DataError("row " + std::to_string(r) + " has zero norm");
    const double inv = 1.0 / std::sqrt(sq);
    for (float& v : row) v = static_cast<float>(v * inv);
  }
  matrix.normalized = true;
  return matrix;
}

void sort_hits(std::vector<ScanHit>& hits) {
  std::sort(hits.begin(), hits.end(), [](const ScanHit& a, const ScanHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.row < b.row;
  });
}

std::vector<ScanHit> cosine_scan(const EmbeddingMatrix& matrix, std::span<const float> query,
                                 double threshold, const ScanOptions& options) {
  if (query.size() != matrix.dim) {
    throw DataError("query has dim " + std::to_string(query.size()) + ", matrix has " +
                    std::to_string(matrix.dim));
  }
  const std::size_t chunk = std::max<std::size_t>(1, options.chunk_rows);
  const std::size_t n_chunks = (matrix.count + chunk - 1) / chunk;

  auto scan_chunk = [&](std::size_t c, std::vector<ScanHit>& out) {
    const std::size_t begin = c * chunk;
    const std::size_t end = std::min(matrix.count, begin + chunk);
    for (std::size_t r = begin; r < end; ++r) {
      const double sim = dot(matrix.row(r), query);
      if (sim >= threshold) out.push_back({r, sim});
    }
  };

  std::vector<ScanHit> hits;
  const unsigned workers = std::max(1u, std::min<unsigned>(options.workers,
                                                           static_cast<unsigned>(n_chunks)));
  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) scan_chunk(c, hits);
  } else {
    // Worker w owns chunks w, w+workers, ...; merge order is fixed by the sort below.
    std::vector<std::vector<ScanHit>> partial(workers);
    std::vector<std::jthread> threads;
    for (unsigned w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        for (std::size_t c = w; c < n_chunks; c += workers) scan_chunk(c, partial[w]);
      });
    }
    threads.clear();
    for (auto& p : partial) hits.insert(hits.end(), p.begin(), p.end());
  }
  sort_hits(hits);
  return hits;
}

std::vector<ImageRecord> load_metadata(const fs::path& path) {
  std::vector<ImageRecord> records;
  for (const auto& obj : io::read_jsonl(path)) {
    ImageRecord rec;
    try {
      rec.id = obj.at("id").get<std::string>();
      rec.url = obj.value("url", std::string{});
      rec.caption = obj.value("caption", std::string{});
      if (auto it = obj.find("ocr_text"); it != obj.end() && !it->is_null()) {
        rec.ocr_text = it->get<std::string>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": record " + std::to_string(records.size()) + ": " +
                      e.what());
    }
    rec.row = records.size();
    records.push_back(std::move(rec));
  }
  return records;
}

void validate_records(const std::vector<ImageRecord>& records, const EmbeddingMatrix& matrix) {
  std::unordered_set<std::string> seen;
  for (const auto& rec : records) {
    if (rec.row >= matrix.count) {
      throw DataError("image " + rec.id + " points at row " + std::to_string(rec.row) +
                      " but the matrix has " + std::to_string(matrix.count) + " rows");
    }
    if (!seen.insert(rec.id).second) throw DataError("duplicate image id " + rec.id);
  }
}

QueryKind parse_query_kind(const std::string& name) {
  if (name == "text") return QueryKind::text;
  if (name == "image") return QueryKind::image;
  throw ConfigError("query kind must be 'text' or 'image', got '" + name + "'");
}

std::string to_string(QueryKind kind) { return kind == QueryKind::text ? "text" : "image"; }

QuerySet load_query_set(const fs::path& embeddings, QueryKind kind,
                        const std::optional<fs::path>& labels) {
  QuerySet set;
  set.kind = kind;
  set.embeddings = normalize(load_embeddings(embeddings));
  if (labels) {
    set.labels = io::read_word_list(*labels);
    if (set.labels.size() != set.embeddings.count) {
      throw DataError(labels->string() + " has " + std::to_string(set.labels.size()) +
                      " labels for " + std::to_string(set.embeddings.count) + " queries");
    }
  } else {
    for (std::size_t i = 0; i < set.embeddings.count; ++i) set.labels.push_back("q" + std::to_string(i));
  }
  return set;
}

}  // namespace sonoscan
