#include "fedae/dataplane.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "fedae/errors.hpp"
#include "json_util.hpp"

namespace fedae {

using detail::json;

FlowRecord LabeledDataset::record(std::size_t i) const {
    return {features.row(static_cast<Eigen::Index>(i)).transpose(), labels.at(i), categories.at(i)};
}

std::size_t LabeledDataset::count(Label l) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), l));
}

LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> rows) {
    LabeledDataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.features.cols());
    out.labels.reserve(rows.size());
    out.categories.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= ds.size()) throw InvalidArgument("row index " + std::to_string(rows[i]) + " out of range");
        out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(static_cast<Eigen::Index>(rows[i]));
        out.labels.push_back(ds.labels[rows[i]]);
        out.categories.push_back(ds.categories[rows[i]]);
    }
    return out;
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.dim() != b.dim()) throw ShapeError::mismatch("concat width", a.dim(), b.dim());
    LabeledDataset out;
    out.features.resize(a.features.rows() + b.features.rows(), a.features.cols());
    out.features << a.features, b.features;
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.categories = a.categories;
    out.categories.insert(out.categories.end(), b.categories.begin(), b.categories.end());
    return out;
}

// ---------------------------------------------------------------------------
// Schema

SchemaConfig parse_schema(const std::string& json_text) {
    using namespace detail;
    const json j = parse_json_text(json_text, "schema");
    check_keys(j, {"label_column", "normal_values", "category_column", "drop_columns", "categorical", "other_token",
                   "input_dim"},
               "");
    SchemaConfig s;
    read(j, "label_column", s.label_column, "");
    read_list(j, "normal_values", s.normal_values, "");
    read(j, "category_column", s.category_column, "");
    read_list(j, "drop_columns", s.drop_columns, "");
    read(j, "other_token", s.other_token, "");
    read(j, "input_dim", s.input_dim, "");
    if (auto it = j.find("categorical"); it != j.end()) {
        if (!it->is_array()) throw SchemaError("key 'categorical' must be an array");
        for (std::size_t i = 0; i < it->size(); ++i) {
            const std::string where = "categorical[" + std::to_string(i) + "]";
            const json& c = (*it)[i];
            check_keys(c, {"column", "vocabulary"}, where);
            CategoricalColumn col;
            read(c, "column", col.column, where);
            read_list(c, "vocabulary", col.vocabulary, where);
            if (col.column.empty() || col.vocabulary.empty()) {
                throw SchemaError(where + " needs a column name and a non-empty vocabulary");
            }
            s.categorical.push_back(std::move(col));
        }
    }
    if (s.label_column.empty()) throw SchemaError("schema must name a label_column");
    return s;
}

SchemaConfig load_schema(const std::string& path) { return parse_schema(detail::read_file(path)); }

SchemaConfig synthetic_schema(std::size_t dim) {
    SchemaConfig s;
    s.label_column = "Attack_label";
    s.category_column = "Attack_type";
    s.normal_values = {"0"};
    s.input_dim = dim;
    return s;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cell.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cell.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else if (ch != '\r') {
            cell.push_back(ch);
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

bool parse_number(const std::string& raw, double& out) {
    const std::string s = trim(raw);
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        std::uint64_t v = 0;
        auto res = std::from_chars(first + 2, last, v, 16);
        if (res.ec != std::errc{} || res.ptr != last) return false;
        out = static_cast<double>(v);
        return true;
    }
    if (*first == '+') ++first;
    auto res = std::from_chars(first, last, out);
    return res.ec == std::errc{} && res.ptr == last && std::isfinite(out);
}

// Canonical text of a categorical cell: "1.0" and "1" should hit the same slot.
std::string canonical_category(const std::string& raw) {
    std::string s = trim(raw);
    const bool hex = s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X');
    double v = 0.0;
    if (!hex && parse_number(s, v) && v == std::floor(v) && std::abs(v) < 1e15) {
        return std::to_string(static_cast<long long>(v));
    }
    return s;
}

struct ColumnPlan {
    enum class Kind { Drop, Label, Category, Numeric, OneHot };
    Kind kind = Kind::Drop;
    const CategoricalColumn* categorical = nullptr;
    std::unordered_map<std::string, std::size_t> slot;  // category -> vocabulary index
    std::size_t other_slot = static_cast<std::size_t>(-1);
    std::size_t offset = 0;  // first output feature
};

}  // namespace

LabeledDataset parse_csv(std::istream& in, const SchemaConfig& schema, const std::string& origin) {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(origin + ": missing header row");
    const std::vector<std::string> header = split_csv_line(line);

    std::vector<ColumnPlan> plan(header.size());
    std::size_t width = 0;
    bool have_label = false;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string name = trim(header[c]);
        ColumnPlan& p = plan[c];
        if (name == schema.label_column) {
            p.kind = ColumnPlan::Kind::Label;
            have_label = true;
        } else if (!schema.category_column.empty() && name == schema.category_column) {
            p.kind = ColumnPlan::Kind::Category;
        } else if (std::find(schema.drop_columns.begin(), schema.drop_columns.end(), name) != schema.drop_columns.end()) {
            p.kind = ColumnPlan::Kind::Drop;
        } else if (auto it = std::find_if(schema.categorical.begin(), schema.categorical.end(),
                                          [&](const CategoricalColumn& cc) { return cc.column == name; });
                   it != schema.categorical.end()) {
            p.kind = ColumnPlan::Kind::OneHot;
            p.categorical = &*it;
            for (std::size_t v = 0; v < it->vocabulary.size(); ++v) {
                p.slot.emplace(canonical_category(it->vocabulary[v]), v);
                if (it->vocabulary[v] == schema.other_token) p.other_slot = v;
            }
            p.offset = width;
            width += it->vocabulary.size();
        } else {
            p.kind = ColumnPlan::Kind::Numeric;
            p.offset = width;
            width += 1;
        }
    }
    if (!have_label) throw SchemaError(origin + ": label column '" + schema.label_column + "' not found in header");
    if (width != schema.input_dim) {
        throw SchemaError(origin + ": encoded feature width is " + std::to_string(width) + ", schema expects " +
                          std::to_string(schema.input_dim));
    }

    std::vector<double> values;
    std::vector<Label> labels;
    std::vector<std::string> categories;
    std::size_t skipped = 0;
    std::vector<double> row(width);
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            ++skipped;
            continue;
        }
        std::fill(row.begin(), row.end(), 0.0);
        bool ok = true;
        Label label = Label::Normal;
        std::string category;
        for (std::size_t c = 0; c < cells.size() && ok; ++c) {
            const ColumnPlan& p = plan[c];
            switch (p.kind) {
                case ColumnPlan::Kind::Drop: break;
                case ColumnPlan::Kind::Label: {
                    const std::string v = canonical_category(cells[c]);
                    const bool normal = std::any_of(schema.normal_values.begin(), schema.normal_values.end(),
                                                    [&](const std::string& n) { return canonical_category(n) == v; });
                    label = normal ? Label::Normal : Label::Attack;
                    break;
                }
                case ColumnPlan::Kind::Category: category = trim(cells[c]); break;
                case ColumnPlan::Kind::Numeric: ok = parse_number(cells[c], row[p.offset]); break;
                case ColumnPlan::Kind::OneHot: {
                    auto it = p.slot.find(canonical_category(cells[c]));
                    if (it != p.slot.end()) row[p.offset + it->second] = 1.0;
                    else if (p.other_slot != static_cast<std::size_t>(-1)) row[p.offset + p.other_slot] = 1.0;
                    break;
                }
            }
        }
        if (!ok) {
            ++skipped;
            continue;
        }
        if (label == Label::Normal) category.clear();
        else if (category.empty()) category = "attack";
        values.insert(values.end(), row.begin(), row.end());
        labels.push_back(label);
        categories.push_back(std::move(category));
    }

    LabeledDataset ds;
    ds.features.resize(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(width));
    if (!values.empty()) std::copy(values.begin(), values.end(), ds.features.data());
    ds.labels = std::move(labels);
    ds.categories = std::move(categories);
    ds.skipped_rows = skipped;
    return ds;
}

LabeledDataset load_csv(const std::string& path, const SchemaConfig& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset '" + path + "'");
    return parse_csv(in, schema, path);
}

std::string dataset_csv(const LabeledDataset& ds) {
    std::string out;
    for (std::size_t c = 0; c < ds.dim(); ++c) out += "f" + std::to_string(c) + ",";
    out += "Attack_label,Attack_type\n";
    for (std::size_t r = 0; r < ds.size(); ++r) {
        for (std::size_t c = 0; c < ds.dim(); ++c) {
            out += detail::format_double(ds.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
            out += ',';
        }
        if (ds.labels[r] == Label::Normal) out += "0,Normal\n";
        else out += "1," + ds.categories[r] + "\n";
    }
    return out;
}

void write_dataset_csv(const LabeledDataset& ds, const std::string& path) { detail::write_file(path, dataset_csv(ds)); }

// ---------------------------------------------------------------------------
// Scaling and splits

ScalerParams fit_scaler(const Matrix& data) {
    if (data.rows() == 0) throw InvalidArgument("cannot fit a scaler on an empty matrix");
    return {data.colwise().minCoeff().transpose(), data.colwise().maxCoeff().transpose()};
}

Matrix apply_scaler(const ScalerParams& scaler, const Matrix& data) {
    if (data.cols() != scaler.min.size()) {
        throw ShapeError::mismatch("scaler input width", static_cast<std::size_t>(scaler.min.size()),
                                   static_cast<std::size_t>(data.cols()));
    }
    Matrix out(data.rows(), data.cols());
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
        const double lo = scaler.min(c);
        const double span = scaler.max(c) - lo;
        for (Eigen::Index r = 0; r < data.rows(); ++r) {
            out(r, c) = span > 0.0 ? std::clamp(2.0 * (data(r, c) - lo) / span - 1.0, -1.0, 1.0) : 0.0;
        }
    }
    return out;
}

std::pair<LabeledDataset, LabeledDataset> split_by_label(const LabeledDataset& ds) {
    std::vector<std::size_t> normal;
    std::vector<std::size_t> attack;
    for (std::size_t i = 0; i < ds.size(); ++i) (ds.labels[i] == Label::Normal ? normal : attack).push_back(i);
    return {subset(ds, normal), subset(ds, attack)};
}

std::pair<LabeledDataset, LabeledDataset> train_val_split(const LabeledDataset& ds, double fraction,
                                                          std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidArgument("train fraction must be in (0, 1)");
    if (ds.empty()) throw InvalidArgument("cannot split an empty dataset");
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(ds.size())));
    std::span<const std::size_t> all(order);
    return {subset(ds, all.first(n_train)), subset(ds, all.subspan(n_train))};
}

// ---------------------------------------------------------------------------
// Dirichlet partitioning

namespace {

// Integer counts summing to `total` that follow `shares`; leftover units go
// to the largest fractional remainders, ties to the lowest client id.
std::vector<std::size_t> largest_remainder(const std::vector<double>& shares, std::size_t total) {
    const std::size_t k = shares.size();
    std::vector<std::size_t> counts(k);
    std::vector<double> frac(k);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < k; ++i) {
        const double quota = shares[i] * static_cast<double>(total);
        counts[i] = static_cast<std::size_t>(std::floor(quota));
        frac[i] = quota - std::floor(quota);
        assigned += counts[i];
    }
    // floating error can overshoot by a unit when shares sum slightly above 1
    while (assigned > total) {
        auto it = std::max_element(counts.begin(), counts.end());
        --*it;
        --assigned;
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t j = 0; assigned < total; j = (j + 1) % k, ++assigned) ++counts[order[j]];
    return counts;
}

std::vector<double> sample_dirichlet(std::size_t k, double alpha, Rng& rng) {
    std::gamma_distribution<double> gamma(alpha, 1.0);
    std::vector<double> draws(k);
    double sum = 0.0;
    for (auto& d : draws) {
        d = gamma(rng);
        sum += d;
    }
    if (!(sum > 0.0)) {
        // every draw underflowed (tiny alpha); fall back to a single random winner
        std::fill(draws.begin(), draws.end(), 0.0);
        draws[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
        return draws;
    }
    for (auto& d : draws) d /= sum;
    return draws;
}

constexpr int kPartitionAttempts = 100;

}  // namespace

PartitionPlan dirichlet_partition(std::span<const Label> labels, std::size_t n_clients, double alpha,
                                  std::uint64_t seed) {
    if (n_clients == 0) throw InvalidArgument("partition needs at least one client");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("dirichlet alpha must be positive");
    if (n_clients > labels.size()) {
        throw InvalidArgument("cannot partition " + std::to_string(labels.size()) + " records over " +
                              std::to_string(n_clients) + " clients");
    }

    std::vector<std::vector<std::size_t>> by_class(2);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i] == Label::Normal ? 0 : 1].push_back(i);

    Rng rng(seed);
    std::vector<std::vector<std::size_t>> assignments;
    for (int attempt = 0; attempt < kPartitionAttempts; ++attempt) {
        assignments.assign(n_clients, {});
        for (auto members : by_class) {
            if (members.empty()) continue;
            std::shuffle(members.begin(), members.end(), rng);
            const auto counts = largest_remainder(sample_dirichlet(n_clients, alpha, rng), members.size());
            std::size_t pos = 0;
            for (std::size_t k = 0; k < n_clients; ++k) {
                assignments[k].insert(assignments[k].end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                                      members.begin() + static_cast<std::ptrdiff_t>(pos + counts[k]));
                pos += counts[k];
            }
        }
        const bool all_nonempty =
            std::none_of(assignments.begin(), assignments.end(), [](const auto& a) { return a.empty(); });
        if (all_nonempty) break;
    }
    // Still empty after resampling: move single records from the largest client.
    for (auto& a : assignments) {
        if (!a.empty()) continue;
        auto largest = std::max_element(assignments.begin(), assignments.end(),
                                        [](const auto& x, const auto& y) { return x.size() < y.size(); });
        a.push_back(largest->back());
        largest->pop_back();
    }
    for (auto& a : assignments) std::sort(a.begin(), a.end());
    return {std::move(assignments), alpha, seed};
}

PartitionPlan dirichlet_partition(const LabeledDataset& ds, std::size_t n_clients, double alpha, std::uint64_t seed) {
    return dirichlet_partition(std::span<const Label>(ds.labels), n_clients, alpha, seed);
}

void write_partition(const PartitionPlan& plan, std::span<const Label> labels, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::string csv = "record_index,client_id\n";
    json clients = json::array();
    for (std::size_t k = 0; k < plan.clients(); ++k) {
        std::size_t normal = 0;
        for (auto idx : plan.assignments[k]) {
            csv += std::to_string(idx) + "," + std::to_string(k) + "\n";
            if (idx < labels.size() && labels[idx] == Label::Normal) ++normal;
        }
        clients.push_back({{"client_id", k},
                           {"records", plan.assignments[k].size()},
                           {"normal", normal},
                           {"attack", plan.assignments[k].size() - normal}});
    }
    json manifest = {{"alpha", plan.alpha}, {"seed", plan.seed}, {"clients", clients}, {"records", labels.size()}};
    detail::write_file((std::filesystem::path(dir) / "partition.csv").string(), csv);
    detail::write_file((std::filesystem::path(dir) / "partition_manifest.json").string(), manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Synthetic flows

namespace {

constexpr double kBurstFraction = 0.03;
constexpr double kQuietNoise = 0.05;
constexpr double kBurstNoise = 1.0;
constexpr double kLoadingGain = 0.5;
constexpr std::size_t kDimsPerFactor = 32;
constexpr double kAttackCoordinateShare = 0.25;

const std::vector<std::string>& attack_categories() {
    static const std::vector<std::string> names{"ransomware", "password", "scanning", "injection", "xss",
                                                "dos",        "backdoor", "ddos",     "mitm"};
    return names;
}

}  // namespace

LabeledDataset synth_generate(const SynthSpec& spec) {
    if (spec.dim == 0) throw InvalidArgument("synthetic dimension must be >= 1");
    if (!std::isfinite(spec.displacement)) throw InvalidArgument("synthetic displacement must be finite");

    Rng rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const std::size_t rank = std::max<std::size_t>(1, spec.dim / kDimsPerFactor);
    Matrix loading(static_cast<Eigen::Index>(spec.dim), static_cast<Eigen::Index>(rank));
    for (Eigen::Index r = 0; r < loading.rows(); ++r) {
        for (Eigen::Index c = 0; c < loading.cols(); ++c) loading(r, c) = gauss(rng) / std::sqrt(double(rank));
    }
    Vector offset(static_cast<Eigen::Index>(spec.dim));
    for (Eigen::Index r = 0; r < offset.size(); ++r) offset(r) = 0.3 * (2.0 * unit(rng) - 1.0);

    auto normal_row = [&]() {
        Vector z(static_cast<Eigen::Index>(rank));
        for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = gauss(rng);
        const double sigma = unit(rng) < kBurstFraction ? kBurstNoise : kQuietNoise;
        Vector x = kLoadingGain * (loading * z) + offset;
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = std::tanh(x(i) + sigma * gauss(rng));
        return x;
    };

    LabeledDataset ds;
    const std::size_t n = spec.n_normal + spec.n_attack;
    ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.dim));
    ds.labels.reserve(n);
    ds.categories.reserve(n);
    for (std::size_t i = 0; i < spec.n_normal; ++i) {
        ds.features.row(static_cast<Eigen::Index>(i)) = normal_row().transpose();
        ds.labels.push_back(Label::Normal);
        ds.categories.emplace_back();
    }
    for (std::size_t i = 0; i < spec.n_attack; ++i) {
        Vector x = normal_row();
        bool any = false;
        for (Eigen::Index c = 0; c < x.size(); ++c) {
            if (unit(rng) < kAttackCoordinateShare) {
                x(c) += unit(rng) < 0.5 ? spec.displacement : -spec.displacement;
                any = true;
            }
        }
        if (!any) {
            const auto c = std::uniform_int_distribution<Eigen::Index>(0, x.size() - 1)(rng);
            x(c) += unit(rng) < 0.5 ? spec.displacement : -spec.displacement;
        }
        ds.features.row(static_cast<Eigen::Index>(spec.n_normal + i)) = x.transpose();
        ds.labels.push_back(Label::Attack);
        ds.categories.push_back(attack_categories()[i % attack_categories().size()]);
    }
    return ds;
}

}  // namespace fedae
