#include "eigmeta/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "eigmeta/errors.hpp"

namespace eigmeta::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t LabeledDataset::count(int label) const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

Matrix LabeledDataset::rows_with_label(int label) const {
    Matrix out(count(label), dim());
    std::size_t r = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != label) continue;
        std::copy_n(attributes.row_span(i).begin(), dim(), out.row_span(r).begin());
        ++r;
    }
    return out;
}

const char* to_string(Split split) noexcept {
    switch (split) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Target: return "target";
    }
    return "train";
}

Split parse_split(std::string_view text) {
    if (text == "train") return Split::Train;
    if (text == "validation" || text == "valid") return Split::Validation;
    if (text == "target" || text == "test") return Split::Target;
    throw Error(ErrorKind::Parse, "unknown split '" + std::string(text) + "'");
}

std::vector<std::size_t> TaskBundle::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == split) out.push_back(i);
    return out;
}

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? comma : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string location(const fs::path& path, std::size_t line, std::size_t column) {
    return path.string() + ":" + std::to_string(line) + " column " + std::to_string(column);
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

}  // namespace

LabeledDataset load_csv(const fs::path& path, const std::string& label_column, bool normalize,
                        std::vector<std::string>* warnings) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());

    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    std::size_t label_index = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view view = trim(line);
        if (view.empty() || view.front() == '#') continue;
        const auto fields = split_fields(view);
        if (header.empty()) {
            for (auto f : fields) header.emplace_back(f);
            const auto it = std::find(header.begin(), header.end(), label_column);
            if (it == header.end()) {
                throw Error(ErrorKind::Parse,
                            path.string() + ": no label column '" + label_column + "' in header");
            }
            label_index = static_cast<std::size_t>(it - header.begin());
            continue;
        }
        if (fields.size() != header.size()) {
            throw Error(ErrorKind::Parse, location(path, line_no, fields.size() + 1) + ": expected " +
                                              std::to_string(header.size()) + " fields, got " +
                                              std::to_string(fields.size()));
        }
        std::vector<double> values(fields.size());
        for (std::size_t c = 0; c < fields.size(); ++c) {
            const auto f = fields[c];
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), values[c]);
            if (ec != std::errc{} || ptr != f.data() + f.size() || !std::isfinite(values[c])) {
                throw Error(ErrorKind::Parse, location(path, line_no, c + 1) + ": not a number '" +
                                                  std::string(f) + "'");
            }
        }
        const double label = values[label_index];
        if (label != 0.0 && label != 1.0) {
            throw Error(ErrorKind::NonBinaryLabel,
                        location(path, line_no, label_index + 1) + ": label " + format_double(label));
        }
        rows.push_back(std::move(values));
    }
    if (header.empty()) throw Error(ErrorKind::Parse, path.string() + ": missing header row");

    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < header.size(); ++c)
        if (c != label_index) keep.push_back(c);

    const std::size_t n = rows.size();
    std::vector<double> mean(header.size(), 0.0), stdev(header.size(), 1.0);
    if (normalize && n > 0) {
        std::vector<std::size_t> kept;
        for (std::size_t c : keep) {
            double m = 0.0;
            for (const auto& r : rows) m += r[c];
            m /= static_cast<double>(n);
            double var = 0.0;
            for (const auto& r : rows) var += (r[c] - m) * (r[c] - m);
            var /= static_cast<double>(n);
            if (!(var > 0.0)) {
                if (warnings) warnings->push_back("dropping zero-variance column '" + header[c] + "'");
                continue;
            }
            mean[c] = m;
            stdev[c] = std::sqrt(var);
            kept.push_back(c);
        }
        if (kept.empty() && !keep.empty()) {
            throw Error(ErrorKind::DegenerateColumn, path.string() + ": every attribute column is constant");
        }
        keep = std::move(kept);
    }

    LabeledDataset ds;
    ds.name = path.stem().string();
    for (std::size_t c : keep) ds.columns.push_back(header[c]);
    ds.attributes = Matrix(n, keep.size());
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < keep.size(); ++k) {
            const std::size_t c = keep[k];
            ds.attributes(i, k) = normalize ? (rows[i][c] - mean[c]) / stdev[c] : rows[i][c];
        }
        ds.labels[i] = static_cast<int>(rows[i][label_index]);
    }
    return ds;
}

void write_csv(const fs::path& path, const LabeledDataset& dataset,
               const std::vector<std::string>& comments) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    for (const auto& c : comments) out << "# " << c << '\n';
    for (std::size_t c = 0; c < dataset.dim(); ++c) {
        out << (c < dataset.columns.size() ? dataset.columns[c] : "x" + std::to_string(c)) << ',';
    }
    out << "label\n";
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        for (std::size_t c = 0; c < dataset.dim(); ++c) out << format_double(dataset.attributes(i, c)) << ',';
        out << dataset.labels[i] << '\n';
    }
    if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

Matrix random_task_matrix(std::size_t dim, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    Matrix r(dim, dim);
    for (double& v : r.values()) v = uniform(rng);
    return r;
}

LabeledDataset transform_task(const LabeledDataset& base, const Matrix& transform, std::string name) {
    LabeledDataset task;
    task.name = std::move(name);
    task.columns = base.columns;
    task.attributes = matmul_nt(base.attributes, transform);
    task.labels = base.labels;
    return task;
}

TaskBundle synthesize_tasks(const LabeledDataset& base, std::size_t n_train, std::size_t n_valid,
                            std::size_t n_target, std::uint64_t seed) {
    TaskBundle bundle;
    bundle.seed = seed;
    const std::size_t total = n_train + n_valid + n_target;
    bundle.tasks.reserve(total);
    for (std::size_t t = 0; t < total; ++t) {
        std::mt19937_64 rng(stream_seed(seed, t, 0));
        const Matrix r = random_task_matrix(base.dim(), rng);
        const Split split = t < n_train ? Split::Train
                            : t < n_train + n_valid ? Split::Validation
                                                    : Split::Target;
        bundle.tasks.push_back(transform_task(base, r, base.name + "_task" + std::to_string(t)));
        bundle.splits.push_back(split);
    }
    return bundle;
}

Episode sample_episode(const LabeledDataset& task, const EpisodeSizes& sizes, std::mt19937_64& rng,
                       std::size_t task_id) {
    std::vector<std::size_t> anomalies, normals;
    for (std::size_t i = 0; i < task.size(); ++i) (task.labels[i] == 1 ? anomalies : normals).push_back(i);

    const std::size_t need_a = sizes.anomaly_support + sizes.anomaly_query;
    const std::size_t need_n = sizes.normal_support + sizes.normal_query;
    if (anomalies.size() < need_a) {
        throw Error(ErrorKind::InsufficientInstances,
                    "task '" + task.name + "' has " + std::to_string(anomalies.size()) +
                        " anomalies, episode needs " + std::to_string(need_a));
    }
    if (normals.size() < need_n) {
        throw Error(ErrorKind::InsufficientInstances,
                    "task '" + task.name + "' has " + std::to_string(normals.size()) +
                        " normals, episode needs " + std::to_string(need_n));
    }

    // Partial Fisher-Yates: the first k entries become a uniform sample
    // without replacement.
    auto draw = [&rng](std::vector<std::size_t>& pool, std::size_t k) {
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
            std::swap(pool[i], pool[pick(rng)]);
        }
    };
    draw(anomalies, need_a);
    draw(normals, need_n);

    auto gather = [&task](const std::vector<std::size_t>& pool, std::size_t begin, std::size_t count) {
        Matrix out(count, task.dim());
        for (std::size_t r = 0; r < count; ++r) {
            const auto src = task.attributes.row_span(pool[begin + r]);
            std::copy(src.begin(), src.end(), out.row_span(r).begin());
        }
        return out;
    };

    Episode ep;
    ep.task = task_id;
    ep.support.anomalies = gather(anomalies, 0, sizes.anomaly_support);
    ep.query_anomalies = gather(anomalies, sizes.anomaly_support, sizes.anomaly_query);
    ep.support.normals = gather(normals, 0, sizes.normal_support);
    ep.query_normals = gather(normals, sizes.normal_support, sizes.normal_query);
    return ep;
}

std::uint64_t stream_seed(std::uint64_t run_seed, std::uint64_t task, std::uint64_t episode) noexcept {
    // splitmix64 finaliser applied to a mixed key
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(run_seed) ^ task) ^ (episode * 0xd1b54a32d192ed03ULL));
}

void write_manifest(const fs::path& dir, const TaskBundle& bundle, const std::string& manifest_name,
                    const std::string& config_json) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "eigmeta-manifest";
    manifest["version"] = 1;
    manifest["seed"] = bundle.seed;
    manifest["config"] = config_json.empty() ? json::object() : json::parse(config_json);
    json tasks = json::array();
    for (std::size_t t = 0; t < bundle.tasks.size(); ++t) {
        char file[32];
        std::snprintf(file, sizeof(file), "task_%04zu.csv", t);
        write_csv(dir / file, bundle.tasks[t],
                  {"eigmeta task=" + std::to_string(t) + " split=" + to_string(bundle.splits[t]) +
                   " seed=" + std::to_string(bundle.seed)});
        tasks.push_back({{"name", bundle.tasks[t].name}, {"file", file}, {"split", to_string(bundle.splits[t])}});
    }
    manifest["tasks"] = std::move(tasks);
    std::ofstream out(dir / manifest_name);
    if (!out) throw Error(ErrorKind::Io, "cannot write manifest in " + dir.string());
    out << manifest.dump(2) << '\n';
}

TaskBundle load_manifest(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw Error(ErrorKind::Io, "cannot open manifest " + manifest.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Parse, manifest.string() + ": " + e.what());
    }
    if (!doc.contains("tasks") || !doc["tasks"].is_array()) {
        throw Error(ErrorKind::Parse, manifest.string() + ": missing 'tasks' array");
    }
    TaskBundle bundle;
    bundle.seed = doc.value("seed", std::uint64_t{0});
    const fs::path base = manifest.parent_path();
    for (const auto& entry : doc["tasks"]) {
        if (!entry.contains("file") || !entry.contains("split")) {
            throw Error(ErrorKind::Parse, manifest.string() + ": task entry needs 'file' and 'split'");
        }
        LabeledDataset ds = load_csv(base / entry["file"].get<std::string>(), "label", false);
        if (entry.contains("name")) ds.name = entry["name"].get<std::string>();
        if (!bundle.tasks.empty() && ds.dim() != bundle.tasks.front().dim()) {
            throw Error(ErrorKind::Parse, "task '" + ds.name + "' attribute count differs from the first task");
        }
        bundle.tasks.push_back(std::move(ds));
        bundle.splits.push_back(parse_split(entry["split"].get<std::string>()));
    }
    return bundle;
}

TaskBundle ring_family(std::size_t n_train, std::size_t n_valid, std::size_t n_target,
                       std::uint64_t seed, const RingFamilyOptions& options) {
    TaskBundle bundle;
    bundle.seed = seed;
    const std::size_t total = n_train + n_valid + n_target;
    for (std::size_t t = 0; t < total; ++t) {
        std::mt19937_64 rng(stream_seed(seed, t, 1));
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        const double angle = 2.0 * std::numbers::pi * unit(rng);
        const double sx = options.min_scale + (options.max_scale - options.min_scale) * unit(rng);
        const double sy = options.min_scale + (options.max_scale - options.min_scale) * unit(rng);
        const double c = std::cos(angle), s = std::sin(angle);
        // rotation * diag(sx, sy)
        const Matrix transform{{c * sx, -s * sy}, {s * sx, c * sy}};

        LabeledDataset base;
        base.columns = {"x0", "x1"};
        const std::size_t n = options.normals_per_task + options.anomalies_per_task;
        base.attributes = Matrix(n, 2);
        base.labels.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (i < options.normals_per_task) {
                base.attributes(i, 0) = gauss(rng);
                base.attributes(i, 1) = gauss(rng);
                base.labels[i] = 0;
            } else {
                const double theta = 2.0 * std::numbers::pi * unit(rng);
                const double radius = options.ring_radius + options.ring_jitter * gauss(rng);
                base.attributes(i, 0) = radius * std::cos(theta);
                base.attributes(i, 1) = radius * std::sin(theta);
                base.labels[i] = 1;
            }
        }
        bundle.tasks.push_back(transform_task(base, transform, "ring_task" + std::to_string(t)));
        bundle.splits.push_back(t < n_train ? Split::Train
                                : t < n_train + n_valid ? Split::Validation
                                                        : Split::Target);
    }
    return bundle;
}

}  // namespace eigmeta::data
