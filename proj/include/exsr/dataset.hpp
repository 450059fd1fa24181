#pragma once

#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "exsr/config.hpp"

namespace exsr {

struct ImageRecord {
  std::string path;
  int64_t width = 0;
  int64_t height = 0;
  double quality = 0.0;  // variance of the Laplacian; higher is sharper
};

/// Identity -> images. Identities are kept in lexicographic order, which is
/// the order prefix splits use.
struct IdentityIndex {
  DatasetKind kind = DatasetKind::kCelebA;
  std::filesystem::path root;
  std::map<std::string, std::vector<ImageRecord>> identities;

  bool empty() const { return identities.empty(); }
  size_t image_count() const;
  std::vector<std::string> identity_ids() const;
};

enum class SplitTag { kTrain, kTest };
std::string to_string(SplitTag tag);
SplitTag split_tag_from_string(const std::string& s);

struct SampleRecord {
  std::string identity_id;
  std::string target_path;
  std::vector<std::string> exemplar_paths;
  SplitTag split = SplitTag::kTrain;
};

/// HR side length used by each dataset kind: 128 (CelebA) or 256 (WebFace).
int64_t default_hr_size(DatasetKind kind);

/// Identities with at least this many images are eligible for a training
/// target plus K exemplars.
inline int64_t min_images_for_k(int k) { return k + 1; }

/// Scans root/<identity>/<image>.{png,jpg,jpeg}. For CelebA kind, a root
/// holding identity_CelebA.txt is read as the flat download instead (images in
/// root/img_align_celeba/ or root/). Unreadable images are skipped with a
/// warning. CelebA kind drops identities with fewer than `min_images`
/// images. WebFace kind keeps the `min_images` sharpest images per identity
/// and drops identities with fewer. Throws DataError if nothing survives.
IdentityIndex ingest(const std::filesystem::path& root, DatasetKind kind, int min_images);

/// Identity-disjoint split.
///   CelebA:  root/list_eval_partition.txt when present (partition 2 is test,
///            0 and 1 train, by majority over an identity's images); otherwise
///            a seeded shuffle with `test_fraction` of identities held out.
///   WebFace: the first 9121 identities train, the rest test; indexes with at
///            most 9121 identities use the same 9121/10575 prefix ratio.
/// Throws DataError with fewer than two identities.
std::pair<IdentityIndex, IdentityIndex> make_splits(const IdentityIndex& index, uint64_t seed,
                                                    double test_fraction = 0.1);

/// Loads and preprocesses images to a fixed HR size (center square crop plus
/// bicubic resize, values in [-1, 1]). Safe for concurrent use; keeps an LRU
/// cache of decoded images.
class ImageSource {
 public:
  ImageSource(int64_t hr_height, int64_t hr_width, size_t cache_capacity = 2048);

  torch::Tensor load(const std::string& path) const;

  int64_t height() const { return height_; }
  int64_t width() const { return width_; }

 private:
  int64_t height_;
  int64_t width_;
  size_t capacity_;
  mutable std::mutex mutex_;
  mutable std::list<std::string> lru_;
  mutable std::unordered_map<std::string, std::pair<torch::Tensor, std::list<std::string>::iterator>> cache_;
};

struct Batch {
  torch::Tensor lr;         // N x 3 x h_LR x w_LR
  torch::Tensor hr;         // N x 3 x H x W
  torch::Tensor exemplars;  // N x K x 3 x H x W
  std::vector<SampleRecord> records;
};

/// Independent 64-bit stream seeds derived from a master seed (splitmix64).
uint64_t derive_seed(uint64_t master, uint64_t stream);

/// Draws `config.train.batch_size` targets: an identity uniformly among those
/// with at least K+1 images, a target uniformly within it, and K distinct
/// exemplars from the remaining images of that identity. Throws DataError if
/// no identity qualifies.
std::vector<SampleRecord> sample_records(const IdentityIndex& index, int k, int count, uint64_t seed,
                                         SplitTag split = SplitTag::kTrain);

/// Materializes records into tensors; lr = downsample(hr, scale_factor).
Batch load_batch(const std::vector<SampleRecord>& records, const ImageSource& source,
                 const ArchConfig& arch);

Batch sample_batch(const IdentityIndex& index, const ImageSource& source, const ModelConfig& config,
                   uint64_t seed, SplitTag split = SplitTag::kTrain);

/// One record per image of every identity with at least K+1 images, each
/// with K exemplars drawn from the same identity.
std::vector<SampleRecord> build_manifest(const IdentityIndex& index, SplitTag split, int k, uint64_t seed);

/// Tab-separated: split, identity, target, exemplar paths. '#' starts a comment.
void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);
std::vector<SampleRecord> read_manifest(const std::filesystem::path& path);

}  // namespace exsr
