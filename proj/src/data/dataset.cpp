#include "lmvae/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lmvae/common/binary_io.hpp"
#include "lmvae/common/errors.hpp"

namespace lmvae::data {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::string_view kLmv1Magic = "LMV1";

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void check_split(const Split& s, std::size_t d, bool labeled, const char* which) {
    if (s.pixels.size() != s.count * d)
        throw ContractError(std::string(which) + " split holds " + std::to_string(s.pixels.size()) +
                            " pixels, expected " + std::to_string(s.count * d));
    if (labeled && s.labels.size() != s.count)
        throw ContractError(std::string(which) + " split label count differs from its sample count");
    if (!labeled && !s.labels.empty()) throw ContractError(std::string(which) + " split has labels but no classes");
}

Split take_first(Split s, std::size_t d, std::size_t n) {
    if (n == 0 || n >= s.count) return s;
    s.count = n;
    s.pixels.resize(n * d);
    if (!s.labels.empty()) s.labels.resize(n);
    return s;
}

// Synthesises one split; `mean_image(label, rng, out)` writes the clean image.
template <class F>
Split synth_split(std::size_t count, std::size_t d, std::size_t classes, double noise, Rng& rng, F mean_image) {
    Split s;
    s.count = count;
    s.pixels.resize(count * d);
    s.labels.resize(count);
    std::vector<double> img(d);
    for (std::size_t i = 0; i < count; ++i) {
        const auto label = static_cast<std::uint8_t>(i % classes);
        s.labels[i] = label;
        mean_image(label, rng, img);
        for (std::size_t k = 0; k < d; ++k) s.pixels[i * d + k] = quantize(img[k] + noise * rng.normal());
    }
    return s;
}

std::vector<std::vector<double>> blob_means(const SynthSpec& sp) {
    const double h = static_cast<double>(sp.height), w = static_cast<double>(sp.width);
    const double radius = 0.3 * std::min(h, w);
    const double spread = std::max(h, w) / 8.0;
    std::vector<std::vector<double>> means(sp.classes, std::vector<double>(sp.height * sp.width));
    for (std::size_t c = 0; c < sp.classes; ++c) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(sp.classes);
        const double cy = (h - 1) / 2.0 + radius * std::sin(angle);
        const double cx = (w - 1) / 2.0 + radius * std::cos(angle);
        for (std::size_t r = 0; r < sp.height; ++r)
            for (std::size_t q = 0; q < sp.width; ++q) {
                const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(q) - cx;
                means[c][r * sp.width + q] = 0.9 * std::exp(-(dx * dx + dy * dy) / (2 * spread * spread));
            }
    }
    return means;
}

double min_pairwise_distance(const std::vector<std::vector<double>>& means) {
    double best = INFINITY;
    for (std::size_t a = 0; a < means.size(); ++a)
        for (std::size_t b = a + 1; b < means.size(); ++b) {
            double s = 0;
            for (std::size_t k = 0; k < means[a].size(); ++k) s += std::pow(means[a][k] - means[b][k], 2);
            best = std::min(best, std::sqrt(s));
        }
    return best;
}

TaskDataset synth_base(const SynthSpec& sp) {
    if (sp.height == 0 || sp.width == 0) throw ConfigError("synthetic image size must be positive");
    if (sp.classes == 0 || sp.classes > 256) throw ConfigError("synthetic class count must be in [1, 256]");
    if (sp.noise < 0) throw ConfigError("synthetic noise must be non-negative");
    TaskDataset ds;
    ds.name = generator_name(sp.generator);
    ds.height = sp.height;
    ds.width = sp.width;
    ds.class_count = sp.classes;
    const std::size_t d = ds.sample_width();
    Rng rng(sp.seed);
    double noise = sp.noise;

    if (sp.generator == Generator::GaussianBlobs) {
        const auto means = blob_means(sp);
        if (sp.separation > 0) {
            if (sp.classes < 2) throw ConfigError("separation needs at least two classes");
            noise = min_pairwise_distance(means) / sp.separation;
        }
        auto f = [&](std::uint8_t c, Rng&, std::vector<double>& img) { img = means[c]; };
        ds.train = synth_split(sp.train_count, d, sp.classes, noise, rng, f);
        ds.test = synth_split(sp.test_count, d, sp.classes, noise, rng, f);
        return ds;
    }
    // stripes: orientation alternates with the class, period grows every
    // two classes; checkers: cell size grows with the class. Random phase.
    const bool stripes = sp.generator == Generator::Stripes;
    auto f = [&](std::uint8_t c, Rng& r, std::vector<double>& img) {
        const std::size_t period = stripes ? 2 + c / 2 : 2 * (1 + c);
        const std::size_t py = r.below(period), px = r.below(period);
        for (std::size_t y = 0; y < sp.height; ++y)
            for (std::size_t x = 0; x < sp.width; ++x) {
                bool on;
                if (stripes) {
                    const std::size_t coord = (c % 2 == 0) ? y + py : x + px;
                    on = 2 * (coord % period) < period;
                } else {
                    const std::size_t half = period / 2;
                    on = (((y + py) / half) + ((x + px) / half)) % 2 == 0;
                }
                img[y * sp.width + x] = on ? 0.9 : 0.1;
            }
    };
    ds.train = synth_split(sp.train_count, d, sp.classes, noise, rng, f);
    ds.test = synth_split(sp.test_count, d, sp.classes, noise, rng, f);
    return ds;
}

template <class F>
Split map_pixels(const Split& s, std::size_t d_out, F per_sample) {
    Split out;
    out.count = s.count;
    out.labels = s.labels;
    out.pixels.resize(s.count * d_out);
    const std::size_t d_in = s.count ? s.pixels.size() / s.count : 0;
    for (std::size_t i = 0; i < s.count; ++i)
        per_sample(std::span<const std::uint8_t>(s.pixels).subspan(i * d_in, d_in),
                   std::span<std::uint8_t>(out.pixels).subspan(i * d_out, d_out));
    return out;
}

TaskDataset synth_transform(const SynthSpec& sp) {
    if (!sp.base) throw ConfigError(std::string(generator_name(sp.generator)) + " needs a base dataset");
    const TaskDataset& b = *sp.base;
    b.validate();
    TaskDataset ds = b;
    ds.name = std::string(generator_name(sp.generator)) + "(" + b.name + ")";
    const std::size_t d = b.sample_width();
    switch (sp.generator) {
    case Generator::Invert: {
        auto f = [](auto in, auto out) {
            for (std::size_t k = 0; k < in.size(); ++k) out[k] = static_cast<std::uint8_t>(255 - in[k]);
        };
        ds.train = map_pixels(b.train, d, f);
        ds.test = map_pixels(b.test, d, f);
        break;
    }
    case Generator::PermutePixels: {
        Rng rng(sp.seed);
        const auto perm = permutation(d, rng);
        auto f = [&](auto in, auto out) {
            for (std::size_t k = 0; k < d; ++k) out[k] = in[perm[k]];
        };
        ds.train = map_pixels(b.train, d, f);
        ds.test = map_pixels(b.test, d, f);
        break;
    }
    case Generator::Rotate90: {
        // clockwise: out(r, c) = in(H - 1 - c, r), out is W x H
        const std::size_t h = b.height, w = b.width, ch = b.channels;
        auto f = [&](auto in, auto out) {
            for (std::size_t r = 0; r < w; ++r)
                for (std::size_t c = 0; c < h; ++c)
                    for (std::size_t k = 0; k < ch; ++k) out[(r * h + c) * ch + k] = in[((h - 1 - c) * w + r) * ch + k];
        };
        ds.height = w;
        ds.width = h;
        ds.train = map_pixels(b.train, d, f);
        ds.test = map_pixels(b.test, d, f);
        break;
    }
    default:
        throw ConfigError("not a transform generator");
    }
    return ds;
}

}  // namespace

// ---- TaskDataset ----

Tensor TaskDataset::rows(Part part, std::span<const std::size_t> indices) const {
    const auto& s = split(part);
    const std::size_t d = sample_width();
    std::vector<double> v(indices.size() * d);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= s.count) throw RangeError("sample index " + std::to_string(indices[i]) + " out of range");
        for (std::size_t k = 0; k < d; ++k) v[i * d + k] = s.pixels[indices[i] * d + k] / 255.0;
    }
    return Tensor::matrix(indices.size(), d, std::move(v));
}

Tensor TaskDataset::all(Part part) const {
    std::vector<std::size_t> idx(split(part).count);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return rows(part, idx);
}

std::vector<std::size_t> TaskDataset::labels(Part part, std::span<const std::size_t> indices) const {
    if (!has_labels()) throw ContractError("dataset '" + name + "' has no labels");
    const auto& s = split(part);
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (auto i : indices) {
        if (i >= s.count) throw RangeError("sample index " + std::to_string(i) + " out of range");
        out.push_back(s.labels[i]);
    }
    return out;
}

void TaskDataset::validate() const {
    if (height == 0 || width == 0 || channels == 0) throw ContractError("dataset '" + name + "' has an empty image shape");
    if (class_count > 256) throw ContractError("class count above 256");
    const std::size_t d = sample_width();
    check_split(train, d, has_labels(), "train");
    check_split(test, d, has_labels(), "test");
    for (const auto* s : {&train, &test})
        for (auto l : s->labels)
            if (l >= class_count)
                throw ContractError("label " + std::to_string(l) + " outside " + std::to_string(class_count) +
                                    " classes");
}

bool operator==(const TaskDataset& a, const TaskDataset& b) {
    auto same = [](const Split& x, const Split& y) {
        return x.count == y.count && x.pixels == y.pixels && x.labels == y.labels;
    };
    return a.name == b.name && a.height == b.height && a.width == b.width && a.channels == b.channels &&
           a.class_count == b.class_count && same(a.train, b.train) && same(a.test, b.test);
}

void TaskSequence::validate() const {
    if (tasks.empty()) throw ContractError("task sequence '" + name + "' is empty");
    if (epochs.size() != tasks.size()) throw ContractError("one epoch count per task required");
    if (!label_budget.empty() && label_budget.size() != tasks.size())
        throw ContractError("one label budget per task required");
    for (auto e : epochs)
        if (e == 0) throw ContractError("epoch counts must be positive");
    const std::size_t d = tasks.front()->sample_width();
    for (const auto& t : tasks) {
        if (!t) throw ContractError("null task in sequence");
        if (t->sample_width() != d) throw ContractError("task '" + t->name + "' differs in sample width");
    }
}

// ---- IDX ----

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes, const std::string& context) {
    ByteReader r(bytes, context);
    if (r.u32_be() != kIdxImagesMagic) {
        ByteReader at(bytes, context);
        at.fail("bad IDX image magic (expected 0x00000803)");
    }
    IdxImages img;
    img.count = r.u32_be();
    img.rows = r.u32_be();
    img.cols = r.u32_be();
    const auto payload = r.raw(img.count * img.rows * img.cols);
    img.pixels.assign(payload.begin(), payload.end());
    if (r.remaining() != 0) r.fail("trailing bytes after " + std::to_string(img.count) + " images");
    return img;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes, const std::string& context) {
    ByteReader r(bytes, context);
    if (r.u32_be() != kIdxLabelsMagic) {
        ByteReader at(bytes, context);
        at.fail("bad IDX label magic (expected 0x00000801)");
    }
    const std::size_t n = r.u32_be();
    const auto payload = r.raw(n);
    if (r.remaining() != 0) r.fail("trailing bytes after " + std::to_string(n) + " labels");
    return {payload.begin(), payload.end()};
}

namespace {
void put_be(ByteWriter& w, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) w.u8(static_cast<std::uint8_t>(v >> s));
}
}  // namespace

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
    ByteWriter w;
    put_be(w, kIdxImagesMagic);
    put_be(w, static_cast<std::uint32_t>(images.count));
    put_be(w, static_cast<std::uint32_t>(images.rows));
    put_be(w, static_cast<std::uint32_t>(images.cols));
    w.raw(images.pixels);
    return w.take();
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
    ByteWriter w;
    put_be(w, kIdxLabelsMagic);
    put_be(w, static_cast<std::uint32_t>(labels.size()));
    w.raw(labels);
    return w.take();
}

TaskDataset load_idx(const std::string& images_path, const std::optional<std::string>& labels_path,
                     std::size_t class_count) {
    auto img = parse_idx_images(read_file_bytes(images_path), images_path);
    TaskDataset ds;
    ds.name = images_path;
    ds.height = img.rows;
    ds.width = img.cols;
    ds.train.count = img.count;
    ds.train.pixels = std::move(img.pixels);
    if (labels_path) {
        auto bytes = read_file_bytes(*labels_path);
        ds.train.labels = parse_idx_labels(bytes, *labels_path);
        if (ds.train.labels.size() != ds.train.count)
            throw FormatError(*labels_path + ": label count " + std::to_string(ds.train.labels.size()) +
                              " differs from image count " + std::to_string(ds.train.count) + " at byte offset 4");
        ds.class_count = class_count;
        for (std::size_t i = 0; i < ds.train.labels.size(); ++i)
            if (ds.train.labels[i] >= class_count)
                throw FormatError(*labels_path + ": label " + std::to_string(ds.train.labels[i]) + " out of range at byte offset " +
                                  std::to_string(8 + i));
    }
    ds.validate();
    return ds;
}

TaskDataset load_idx_task(const std::string& name, const std::string& dir, const std::string& prefix,
                          std::size_t max_train, std::size_t max_test) {
    const std::string base = dir + "/" + prefix;
    auto train = load_idx(base + "-train-images.idx", base + "-train-labels.idx");
    auto test = load_idx(base + "-test-images.idx", base + "-test-labels.idx");
    if (train.height != test.height || train.width != test.width)
        throw FormatError(base + ": train and test image sizes differ at byte offset 8");
    TaskDataset ds;
    ds.name = name;
    ds.height = train.height;
    ds.width = train.width;
    ds.class_count = train.class_count;
    ds.train = take_first(std::move(train.train), ds.sample_width(), max_train);
    ds.test = take_first(std::move(test.train), ds.sample_width(), max_test);
    return ds;
}

// ---- LMV1 ----

std::vector<std::uint8_t> encode_lmv1(const TaskDataset& ds) {
    ds.validate();
    auto u16 = [](std::size_t v, const char* what) {
        if (v > 0xffff) throw ContractError(std::string(what) + " does not fit the LMV1 header");
        return static_cast<std::uint16_t>(v);
    };
    ByteWriter w;
    w.raw(kLmv1Magic);
    w.u32(static_cast<std::uint32_t>(ds.train.count));
    w.u32(static_cast<std::uint32_t>(ds.test.count));
    w.u16(u16(ds.height, "height"));
    w.u16(u16(ds.width, "width"));
    w.u16(u16(ds.channels, "channels"));
    w.u16(u16(ds.class_count, "class count"));
    w.str(ds.name);
    w.raw(ds.train.pixels);
    w.raw(ds.test.pixels);
    w.raw(ds.train.labels);
    w.raw(ds.test.labels);
    return w.take();
}

TaskDataset decode_lmv1(std::span<const std::uint8_t> bytes, const std::string& context) {
    ByteReader r(bytes, context);
    const auto magic = r.raw(4);
    if (!std::equal(magic.begin(), magic.end(), kLmv1Magic.begin())) {
        ByteReader at(bytes, context);
        at.fail("bad LMV1 magic");
    }
    TaskDataset ds;
    ds.train.count = r.u32();
    ds.test.count = r.u32();
    ds.height = r.u16();
    ds.width = r.u16();
    ds.channels = r.u16();
    ds.class_count = r.u16();
    ds.name = r.str();
    const std::size_t d = ds.sample_width();
    if (d == 0) r.fail("empty image shape");
    for (auto* s : {&ds.train, &ds.test}) {
        auto p = r.raw(s->count * d);
        s->pixels.assign(p.begin(), p.end());
    }
    if (ds.class_count > 0)
        for (auto* s : {&ds.train, &ds.test}) {
            const std::size_t at = r.offset();
            auto l = r.raw(s->count);
            s->labels.assign(l.begin(), l.end());
            for (std::size_t i = 0; i < l.size(); ++i)
                if (l[i] >= ds.class_count)
                    throw FormatError(context + ": label out of range at byte offset " + std::to_string(at + i));
        }
    if (r.remaining() != 0) r.fail("trailing bytes");
    return ds;
}

void save_lmv1(const std::string& path, const TaskDataset& ds) { write_file_bytes(path, encode_lmv1(ds)); }

TaskDataset load_lmv1(const std::string& path) { return decode_lmv1(read_file_bytes(path), path); }

// ---- synthetic ----

Generator parse_generator(const std::string& id) {
    for (auto g : {Generator::GaussianBlobs, Generator::Stripes, Generator::Checkers, Generator::Invert,
                   Generator::PermutePixels, Generator::Rotate90})
        if (id == generator_name(g)) return g;
    throw ConfigError("unknown generator '" + id + "'");
}

const char* generator_name(Generator g) {
    switch (g) {
    case Generator::GaussianBlobs: return "gaussian-blobs";
    case Generator::Stripes: return "stripes";
    case Generator::Checkers: return "checkers";
    case Generator::Invert: return "invert";
    case Generator::PermutePixels: return "permute-pixels";
    case Generator::Rotate90: return "rotate90";
    }
    return "?";
}

TaskDataset synthesize_task(const SynthSpec& spec) {
    switch (spec.generator) {
    case Generator::GaussianBlobs:
    case Generator::Stripes:
    case Generator::Checkers:
        return synth_base(spec);
    case Generator::Invert:
    case Generator::PermutePixels:
    case Generator::Rotate90:
        return synth_transform(spec);
    }
    throw ConfigError("unknown generator");
}

// ---- splitting ----

SemiSupervisedSplit split_semi_supervised(const TaskDataset& ds, std::size_t labeled_count, std::uint64_t seed) {
    if (!ds.has_labels()) throw ContractError("semi-supervised split of '" + ds.name + "' needs labels");
    if (labeled_count > ds.train.count)
        throw ContractError("labeled count " + std::to_string(labeled_count) + " exceeds " +
                            std::to_string(ds.train.count) + " training samples");
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> by_class(ds.class_count);
    for (std::size_t i = 0; i < ds.train.count; ++i) by_class[ds.train.labels[i]].push_back(i);
    for (auto& v : by_class) {
        const auto p = permutation(v.size(), rng);
        std::vector<std::size_t> shuffled(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) shuffled[i] = v[p[i]];
        v = std::move(shuffled);
    }
    // round-robin over classes in a seeded order
    const auto class_order = permutation(ds.class_count, rng);
    std::vector<std::size_t> quota(ds.class_count, 0);
    std::size_t assigned = 0;
    while (assigned < labeled_count)
        for (auto c : class_order) {
            if (assigned == labeled_count) break;
            if (quota[c] < by_class[c].size()) {
                ++quota[c];
                ++assigned;
            }
        }
    std::vector<std::uint8_t> is_labeled(ds.train.count, 0);
    for (std::size_t c = 0; c < ds.class_count; ++c)
        for (std::size_t i = 0; i < quota[c]; ++i) is_labeled[by_class[c][i]] = 1;
    SemiSupervisedSplit out;
    for (std::size_t i = 0; i < ds.train.count; ++i) (is_labeled[i] ? out.labeled : out.unlabeled).push_back(i);
    return out;
}

std::vector<std::size_t> batch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    auto rng = Rng::stream(seed, epoch);
    return permutation(n, rng);
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    return out;
}

}  // namespace lmvae::data
