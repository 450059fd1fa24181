#include "exsr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>


#include "exsr/errors.hpp"
#include "exsr/log.hpp"
#include "exsr/image_io.hpp"
#include "exsr/resample.hpp"

namespace exsr {

namespace fs = std::filesystem;

namespace {

constexpr int64_t kWebFaceTrainIdentities = 9121;
constexpr int64_t kWebFaceTotalIdentities = 10575;

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool want_dirs) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (want_dirs ? entry.is_directory() : entry.is_regular_file()) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::map<std::string, int> read_celeba_partition(const fs::path& file) {
  std::map<std::string, int> out;
  std::ifstream in(file);
  std::string name;
  int part = 0;
  while (in >> name >> part) out[name] = part;
  return out;
}

}  // namespace

size_t IdentityIndex::image_count() const {
  size_t n = 0;
  for (const auto& [_, images] : identities) n += images.size();
  return n;
}

std::vector<std::string> IdentityIndex::identity_ids() const {
  std::vector<std::string> ids;
  ids.reserve(identities.size());
  for (const auto& [id, _] : identities) ids.push_back(id);
  return ids;
}

std::string to_string(SplitTag tag) { return tag == SplitTag::kTrain ? "train" : "test"; }

SplitTag split_tag_from_string(const std::string& s) {
  if (s == "train") return SplitTag::kTrain;
  if (s == "test") return SplitTag::kTest;
  throw DataError("unknown split tag '" + s + "'");
}

int64_t default_hr_size(DatasetKind kind) { return kind == DatasetKind::kCelebA ? 128 : 256; }

namespace {

// Flat CelebA download: identity_CelebA.txt lists "<file> <identity>" for
// images stored under img_align_celeba/ (or next to the list).
std::map<std::string, std::vector<fs::path>> celeba_identity_groups(const fs::path& root) {
  const fs::path image_dir = fs::is_directory(root / "img_align_celeba") ? root / "img_align_celeba" : root;
  std::map<std::string, std::vector<fs::path>> groups;
  std::ifstream in(root / "identity_CelebA.txt");
  std::string file, identity;
  while (in >> file >> identity) groups[identity].push_back(image_dir / file);
  for (auto& [_, files] : groups) std::sort(files.begin(), files.end());
  return groups;
}

}  // namespace

IdentityIndex ingest(const fs::path& root, DatasetKind kind, int min_images) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  IdentityIndex index;
  index.kind = kind;
  index.root = root;
  const int64_t size = default_hr_size(kind);
  size_t skipped = 0;

  std::map<std::string, std::vector<fs::path>> groups;
  if (kind == DatasetKind::kCelebA && fs::exists(root / "identity_CelebA.txt")) {
    groups = celeba_identity_groups(root);
  } else {
    for (const auto& dir : sorted_entries(root, /*want_dirs=*/true)) {
      auto& files = groups[dir.filename().string()];
      for (const auto& file : sorted_entries(dir, /*want_dirs=*/false)) {
        if (is_image_file(file)) files.push_back(file);
      }
    }
  }

  for (const auto& [identity, files] : groups) {
    // Cheap pre-filter: decoding cannot add images.
    if (static_cast<int>(files.size()) < min_images) continue;
    std::vector<ImageRecord> images;
    for (const auto& file : files) {
      torch::Tensor img;
      try {
        img = load_image(file);
      } catch (const IoError& e) {
        log::warn("skipping unreadable image " + file.string() + ": " + e.what());
        ++skipped;
        continue;
      }
      ImageRecord rec;
      rec.path = file.string();
      rec.height = img.size(1);
      rec.width = img.size(2);
      if (kind == DatasetKind::kWebFace) rec.quality = laplacian_variance(center_crop_resize(img, size, size));
      images.push_back(std::move(rec));
    }
    if (static_cast<int>(images.size()) < min_images) continue;
    if (kind == DatasetKind::kWebFace) {
      std::stable_sort(images.begin(), images.end(),
                       [](const ImageRecord& a, const ImageRecord& b) { return a.quality > b.quality; });
      images.resize(static_cast<size_t>(min_images));
    }
    index.identities.emplace(identity, std::move(images));
  }
  if (skipped > 0) log::warn("ingest: skipped " + std::to_string(skipped) + " unreadable images under " + root.string());
  if (index.empty()) {
    throw DataError("no identity under " + root.string() + " has at least " + std::to_string(min_images) +
                    " readable images");
  }
  return index;
}

std::pair<IdentityIndex, IdentityIndex> make_splits(const IdentityIndex& index, uint64_t seed,
                                                    double test_fraction) {
  const auto ids = index.identity_ids();
  const auto n = static_cast<int64_t>(ids.size());
  if (n < 2) throw DataError("need at least two identities to split, got " + std::to_string(n));

  std::vector<std::string> train_ids, test_ids;
  const fs::path partition_file = index.root / "list_eval_partition.txt";
  if (index.kind == DatasetKind::kCelebA && fs::exists(partition_file)) {
    const auto partition = read_celeba_partition(partition_file);
    for (const auto& id : ids) {
      int votes_test = 0, votes_train = 0;
      for (const auto& rec : index.identities.at(id)) {
        auto it = partition.find(fs::path(rec.path).filename().string());
        if (it == partition.end()) continue;
        (it->second == 2 ? votes_test : votes_train)++;
      }
      (votes_test > votes_train ? test_ids : train_ids).push_back(id);
    }
  } else if (index.kind == DatasetKind::kWebFace) {
    int64_t n_train = kWebFaceTrainIdentities;
    if (n <= kWebFaceTrainIdentities) {
      n_train = static_cast<int64_t>(std::llround(static_cast<double>(n) * kWebFaceTrainIdentities /
                                                  kWebFaceTotalIdentities));
    }
    n_train = std::clamp<int64_t>(n_train, 1, n - 1);
    train_ids.assign(ids.begin(), ids.begin() + n_train);
    test_ids.assign(ids.begin() + n_train, ids.end());
  } else {
    auto order = ids;
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const int64_t n_test = std::clamp<int64_t>(
        static_cast<int64_t>(std::llround(static_cast<double>(n) * test_fraction)), 1, n - 1);
    test_ids.assign(order.begin(), order.begin() + n_test);
    train_ids.assign(order.begin() + n_test, order.end());
  }
  if (train_ids.empty() || test_ids.empty()) {
    throw DataError("split produced an empty side (" + std::to_string(train_ids.size()) + " train, " +
                    std::to_string(test_ids.size()) + " test identities)");
  }

  IdentityIndex train, test;
  train.kind = test.kind = index.kind;
  train.root = test.root = index.root;
  for (const auto& id : train_ids) train.identities.emplace(id, index.identities.at(id));
  for (const auto& id : test_ids) test.identities.emplace(id, index.identities.at(id));
  return {std::move(train), std::move(test)};
}

ImageSource::ImageSource(int64_t hr_height, int64_t hr_width, size_t cache_capacity)
    : height_(hr_height), width_(hr_width), capacity_(cache_capacity) {}

torch::Tensor ImageSource::load(const std::string& path) const {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (auto it = cache_.find(path); it != cache_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second.second);
      return it->second.first;
    }
  }
  auto img = load_image(path);
  if (img.size(1) != height_ || img.size(2) != width_) img = center_crop_resize(img, height_, width_);
  if (capacity_ == 0) return img;
  std::lock_guard<std::mutex> lock(mutex_);
  if (cache_.find(path) == cache_.end()) {
    lru_.push_front(path);
    cache_.emplace(path, std::make_pair(img, lru_.begin()));
    if (cache_.size() > capacity_) {
      cache_.erase(lru_.back());
      lru_.pop_back();
    }
  }
  return img;
}

uint64_t derive_seed(uint64_t master, uint64_t stream) {
  uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

SampleRecord draw_record(const std::string& id, const std::vector<ImageRecord>& images, int64_t target, int k,
                         SplitTag split, std::mt19937_64& rng) {
  SampleRecord rec;
  rec.identity_id = id;
  rec.split = split;
  rec.target_path = images[static_cast<size_t>(target)].path;
  std::vector<int64_t> pool;
  for (int64_t i = 0; i < static_cast<int64_t>(images.size()); ++i) {
    if (i != target) pool.push_back(i);
  }
  // Partial Fisher-Yates: the first k entries become the exemplars.
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<size_t> pick(static_cast<size_t>(i), pool.size() - 1);
    std::swap(pool[static_cast<size_t>(i)], pool[pick(rng)]);
    rec.exemplar_paths.push_back(images[static_cast<size_t>(pool[static_cast<size_t>(i)])].path);
  }
  return rec;
}

}  // namespace

std::vector<SampleRecord> sample_records(const IdentityIndex& index, int k, int count, uint64_t seed,
                                         SplitTag split) {
  std::vector<const std::pair<const std::string, std::vector<ImageRecord>>*> eligible;
  for (const auto& entry : index.identities) {
    if (static_cast<int64_t>(entry.second.size()) >= min_images_for_k(k)) eligible.push_back(&entry);
  }
  if (eligible.empty()) {
    throw DataError("no identity has the " + std::to_string(min_images_for_k(k)) +
                    " images needed for K=" + std::to_string(k));
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick_identity(0, eligible.size() - 1);
  std::vector<SampleRecord> out;
  out.reserve(static_cast<size_t>(count));
  for (int n = 0; n < count; ++n) {
    const auto& [id, images] = *eligible[pick_identity(rng)];
    std::uniform_int_distribution<int64_t> pick_target(0, static_cast<int64_t>(images.size()) - 1);
    out.push_back(draw_record(id, images, pick_target(rng), k, split, rng));
  }
  return out;
}

Batch load_batch(const std::vector<SampleRecord>& records, const ImageSource& source, const ArchConfig& arch) {
  if (records.empty()) throw DataError("cannot load an empty batch");
  const auto n = static_cast<int64_t>(records.size());
  const int64_t k = static_cast<int64_t>(records.front().exemplar_paths.size());
  std::vector<torch::Tensor> hr, ex;
  hr.reserve(records.size());
  for (const auto& rec : records) {
    if (static_cast<int64_t>(rec.exemplar_paths.size()) != k) throw DataError("records disagree on K");
    hr.push_back(source.load(rec.target_path));
    for (const auto& p : rec.exemplar_paths) ex.push_back(source.load(p));
  }
  Batch batch;
  batch.hr = torch::stack(hr);
  batch.lr = downsample(batch.hr, arch.scale_factor);
  if (k > 0) {
    batch.exemplars = torch::stack(ex).reshape({n, k, 3, source.height(), source.width()});
  } else {
    batch.exemplars = torch::empty({n, 0, 3, source.height(), source.width()});
  }
  batch.records = records;
  return batch;
}

Batch sample_batch(const IdentityIndex& index, const ImageSource& source, const ModelConfig& config,
                   uint64_t seed, SplitTag split) {
  return load_batch(sample_records(index, config.arch.k, config.train.batch_size, seed, split), source,
                    config.arch);
}

std::vector<SampleRecord> build_manifest(const IdentityIndex& index, SplitTag split, int k, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<SampleRecord> out;
  for (const auto& [id, images] : index.identities) {
    if (static_cast<int64_t>(images.size()) < min_images_for_k(k)) continue;
    for (int64_t t = 0; t < static_cast<int64_t>(images.size()); ++t) {
      out.push_back(draw_record(id, images, t, k, split, rng));
    }
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<SampleRecord>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << "# split\tidentity\ttarget\texemplars...\n";
    for (const auto& r : records) {
      out << to_string(r.split) << '\t' << r.identity_id << '\t' << r.target_path;
      for (const auto& e : r.exemplar_paths) out << '\t' << e;
      out << '\n';
    }
    if (!out) throw IoError("error writing manifest " + path.string());
  }
  fs::rename(tmp, path);
}

std::vector<SampleRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<SampleRecord> out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (fields.size() < 3) {
      throw DataError("manifest " + path.string() + ":" + std::to_string(line_no) + ": expected at least 3 fields");
    }
    SampleRecord r;
    r.split = split_tag_from_string(fields[0]);
    r.identity_id = fields[1];
    r.target_path = fields[2];
    r.exemplar_paths.assign(fields.begin() + 3, fields.end());
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace exsr
