#include "s2conv/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "s2conv/error.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

namespace {

Eigen::Map<const Eigen::VectorXd> as_eigen(const EmbeddingVector& v) {
    return {v.values.data(), static_cast<Eigen::Index>(v.dim())};
}

double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

void check_k(std::size_t k, std::size_t bank_size) {
    if (bank_size == 0) {
        throw EmptyBank("cannot dispatch from an empty bank");
    }
    if (k < 1 || k > bank_size) {
        throw SchemaError("k must be between 1 and " + std::to_string(bank_size) + ", got " + std::to_string(k));
    }
}

}  // namespace

MatchModel MatchModel::initial(std::size_t dim, std::string embedder_fingerprint) {
    const auto n = static_cast<Eigen::Index>(dim);
    return {Eigen::MatrixXd::Identity(n, n), 0.0, 1.0, std::move(embedder_fingerprint)};
}

EmbeddingVector featurize(const CharacterProfile& profile, const Embedder& embedder) {
    return embedder.embed(render_persona_lines(profile.persona));
}

double predict(const MatchModel& model, const EmbeddingVector& seeker, const EmbeddingVector& supporter) {
    if (seeker.dim() != model.dim() || supporter.dim() != model.dim() || model.w.cols() != model.w.rows()) {
        throw DimensionMismatch("model is " + std::to_string(model.w.rows()) + "x" +
                                std::to_string(model.w.cols()) + " but features have dims " +
                                std::to_string(seeker.dim()) + " and " + std::to_string(supporter.dim()));
    }
    const double bilinear = as_eigen(seeker).dot(model.w * as_eigen(supporter));
    // Kept inside the open interval when the sigmoid saturates.
    const double score = 1.0 + 4.0 * sigmoid(model.scale * bilinear + model.bias);
    return std::clamp(score, std::nextafter(1.0, 5.0), std::nextafter(5.0, 1.0));
}

// ---------------------------------------------------------------- training

namespace {

// Examples reduced to rows of a per-character feature matrix so one epoch
// costs a handful of small matrix products however many pairs there are.
struct TrainingSet {
    Eigen::MatrixXd features;  // one row per distinct character
    std::vector<Eigen::Index> seeker;
    std::vector<Eigen::Index> supporter;
    Eigen::VectorXd label;
};

TrainingSet prepare(std::span<const MatchExample> examples, const CharacterBank& bank,
                    const Embedder& embedder) {
    std::map<std::string, Eigen::Index, std::less<>> rows;
    std::vector<EmbeddingVector> feats;
    const auto row_of = [&](const std::string& id) {
        if (const auto it = rows.find(id); it != rows.end()) {
            return it->second;
        }
        feats.push_back(featurize(bank.at(id), embedder));
        const auto r = static_cast<Eigen::Index>(feats.size() - 1);
        rows.emplace(id, r);
        return r;
    };
    TrainingSet set;
    set.label.resize(static_cast<Eigen::Index>(examples.size()));
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        if (!std::isfinite(ex.compatibility)) {
            throw SchemaError("example " + std::to_string(i) + " has a non-finite compatibility");
        }
        set.seeker.push_back(row_of(ex.seeker_id));
        set.supporter.push_back(row_of(ex.supporter_id));
        set.label(static_cast<Eigen::Index>(i)) = ex.compatibility;
    }
    const auto dim = static_cast<Eigen::Index>(embedder.dim());
    set.features.resize(static_cast<Eigen::Index>(feats.size()), dim);
    for (std::size_t r = 0; r < feats.size(); ++r) {
        if (feats[r].dim() != embedder.dim()) {
            throw DimensionMismatch("embedder returned a vector of the wrong dimension");
        }
        set.features.row(static_cast<Eigen::Index>(r)) = as_eigen(feats[r]).transpose();
    }
    return set;
}

struct Gradient {
    Eigen::MatrixXd w;
    double bias = 0.0;
    double scale = 0.0;
};

double loss_and_gradient(const MatchModel& model, const TrainingSet& set, Gradient* grad) {
    const Eigen::MatrixXd bilinear = set.features * model.w * set.features.transpose();
    const auto m = set.features.rows();
    Eigen::MatrixXd pair_weight;
    if (grad) {
        pair_weight.setZero(m, m);
        grad->bias = 0.0;
        grad->scale = 0.0;
    }
    const auto n = static_cast<double>(set.label.size());
    double total = 0.0;
    for (Eigen::Index i = 0; i < set.label.size(); ++i) {
        const auto s = set.seeker[static_cast<std::size_t>(i)];
        const auto u = set.supporter[static_cast<std::size_t>(i)];
        const double b = bilinear(s, u);
        const double sig = sigmoid(model.scale * b + model.bias);
        const double err = 1.0 + 4.0 * sig - set.label(i);
        total += err * err;
        if (grad) {
            // d(err^2)/dz averaged over the batch.
            const double dz = 2.0 * err * 4.0 * sig * (1.0 - sig) / n;
            pair_weight(s, u) += dz;
            grad->bias += dz;
            grad->scale += dz * b;
        }
    }
    if (grad) {
        grad->w = model.scale * (set.features.transpose() * pair_weight * set.features);
    }
    return total / n;
}

}  // namespace

double matcher_loss(const MatchModel& model, std::span<const MatchExample> examples,
                    const CharacterBank& bank, const Embedder& embedder) {
    if (examples.empty()) {
        throw EmptyInput("matcher loss needs at least one example");
    }
    if (model.dim() != embedder.dim()) {
        throw DimensionMismatch("model and embedder dimensions differ");
    }
    return loss_and_gradient(model, prepare(examples, bank, embedder), nullptr);
}

MatcherTraining train_matcher(std::span<const MatchExample> examples, const CharacterBank& bank,
                              const Embedder& embedder, int epochs, double lr, std::uint64_t /*seed*/,
                              MatcherOptimizer optimizer) {
    if (examples.size() < 2) {
        throw EmptyInput("matcher training needs at least two examples");
    }
    if (epochs < 0 || !(lr >= 0.0)) {
        throw SchemaError("epochs and learning rate must be non-negative");
    }
    const TrainingSet set = prepare(examples, bank, embedder);

    MatcherTraining out{MatchModel::initial(embedder.dim(), embedder.fingerprint()), {},
                        std::numeric_limits<double>::infinity()};
    MatchModel current = out.model;
    Gradient grad;
    // Inverse of the ridge-regularized second moment of the training
    // characters' features, applied to both sides of the W gradient.
    Eigen::MatrixXd precond;
    if (optimizer == MatcherOptimizer::Preconditioned) {
        const auto d = set.features.cols();
        const Eigen::MatrixXd moment =
            set.features.transpose() * set.features / static_cast<double>(set.features.rows()) +
            kMatcherPreconditionRidge * Eigen::MatrixXd::Identity(d, d);
        precond = moment.ldlt().solve(Eigen::MatrixXd::Identity(d, d));
    }
    for (int epoch = 0; epoch <= epochs; ++epoch) {
        const bool last = epoch == epochs;
        const double loss = loss_and_gradient(current, set, last ? nullptr : &grad);
        if (!std::isfinite(loss)) {
            throw NonFiniteLoss("matcher loss became non-finite at epoch " + std::to_string(epoch) +
                                "; lower the learning rate");
        }
        out.loss_trace.push_back(loss);
        if (loss < out.best_loss) {
            out.best_loss = loss;
            out.model = current;
        }
        if (last) {
            break;
        }
        if (optimizer == MatcherOptimizer::Preconditioned) {
            current.w -= lr * (precond * grad.w * precond);
        } else {
            current.w -= lr * grad.w;
        }
        current.bias -= lr * grad.bias;
        current.scale -= lr * grad.scale;
    }
    return out;
}

// ---------------------------------------------------------------- dispatch

FeatureIndex::FeatureIndex(const CharacterBank& bank, const Embedder& embedder) {
    std::vector<const CharacterProfile*> sorted;
    for (const auto& c : bank.characters()) {
        sorted.push_back(&c);
    }
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
    for (const auto* c : sorted) {
        ids_.push_back(c->id);
        features_.push_back(featurize(*c, embedder));
    }
}

const EmbeddingVector* FeatureIndex::find(std::string_view id) const {
    const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    return it != ids_.end() && *it == id ? &features_[static_cast<std::size_t>(it - ids_.begin())] : nullptr;
}

std::vector<MatchCandidate> dispatch(const MatchModel& model, const EmbeddingVector& seeker,
                                     const FeatureIndex& index, std::size_t k,
                                     std::optional<std::string_view> exclude_id) {
    check_k(k, index.size());
    std::vector<MatchCandidate> all;
    all.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (exclude_id && index.ids()[i] == *exclude_id) {
            continue;
        }
        all.push_back({index.ids()[i], predict(model, seeker, index.features()[i])});
    }
    std::stable_sort(all.begin(), all.end(), [](const MatchCandidate& a, const MatchCandidate& b) {
        return a.score > b.score || (a.score == b.score && a.supporter_id < b.supporter_id);
    });
    all.resize(std::min(k, all.size()));
    return all;
}

std::vector<MatchCandidate> dispatch(const MatchModel& model, const CharacterProfile& seeker,
                                     const CharacterBank& bank, const Embedder& embedder, std::size_t k) {
    check_k(k, bank.size());
    const FeatureIndex index(bank, embedder);
    return dispatch(model, featurize(seeker, embedder), index, k, seeker.id);
}

std::vector<MatchCandidate> dispatch(const MatchModel& model, std::string_view seeker_persona,
                                     const CharacterBank& bank, const Embedder& embedder, std::size_t k) {
    check_k(k, bank.size());
    if (trim(seeker_persona).empty()) {
        throw EmptyInput("seeker persona must not be empty");
    }
    const FeatureIndex index(bank, embedder);
    return dispatch(model, embedder.embed(seeker_persona), index, k);
}

std::vector<MatchCandidate> fallback_dispatch(std::string_view seeker_persona, const FeatureIndex& index,
                                              std::size_t k, std::uint64_t seed) {
    check_k(k, index.size());
    std::vector<std::string> ids = index.ids();
    std::mt19937_64 rng(mix_seed(seed, fnv1a(seeker_persona)));
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<MatchCandidate> out;
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back({ids[i], 3.0});
    }
    return out;
}

// ------------------------------------------------------------------ files

void save_match_examples(const std::filesystem::path& path, std::span<const MatchExample> examples) {
    std::string content;
    for (const auto& ex : examples) {
        nlohmann::ordered_json j;
        j["seeker_id"] = ex.seeker_id;
        j["supporter_id"] = ex.supporter_id;
        j["compatibility"] = ex.compatibility;
        content += j.dump() + "\n";
    }
    write_text_file(path, content);
}

std::vector<MatchExample> load_match_examples(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open examples file " + path.string());
    }
    std::vector<MatchExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({j.at("seeker_id").get<std::string>(), j.at("supporter_id").get<std::string>(),
                           j.at("compatibility").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<MatchExample> match_examples_from(std::span<const Conversation> conversations,
                                              std::span<const ScoredConversation> scores) {
    std::map<std::string_view, const Conversation*> by_id;
    for (const auto& c : conversations) {
        by_id.emplace(c.id, &c);
    }
    std::vector<MatchExample> out;
    for (const auto& s : scores) {
        const auto it = by_id.find(s.conversation_id);
        if (it == by_id.end()) {
            throw SchemaError("scored conversation '" + s.conversation_id + "' is not in the dataset");
        }
        out.push_back({it->second->seeker_id, it->second->supporter_id, compatibility(s.scores)});
    }
    return out;
}

void save_match_model(const MatchModel& model, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["dim"] = model.dim();
    auto& rows = j["w"] = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < model.w.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(model.w.cols()));
        for (Eigen::Index c = 0; c < model.w.cols(); ++c) {
            row[static_cast<std::size_t>(c)] = model.w(r, c);
        }
        rows.push_back(row);
    }
    j["bias"] = model.bias;
    j["scale"] = model.scale;
    j["embedder"] = model.embedder_fingerprint;
    write_text_file(path, j.dump() + "\n");
}

MatchModel load_match_model(const std::filesystem::path& path,
                            std::optional<std::string_view> expected_fingerprint) {
    MatchModel model;
    try {
        const auto j = nlohmann::json::parse(read_text_file(path));
        const auto dim = j.at("dim").get<Eigen::Index>();
        const auto& rows = j.at("w");
        if (dim <= 0 || static_cast<Eigen::Index>(rows.size()) != dim) {
            throw SchemaError("match model " + path.string() + " has an inconsistent dimension");
        }
        model.w.resize(dim, dim);
        for (Eigen::Index r = 0; r < dim; ++r) {
            const auto row = rows.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
            if (static_cast<Eigen::Index>(row.size()) != dim) {
                throw SchemaError("match model row " + std::to_string(r) + " has the wrong length");
            }
            for (Eigen::Index c = 0; c < dim; ++c) {
                model.w(r, c) = row[static_cast<std::size_t>(c)];
            }
        }
        model.bias = j.at("bias").get<double>();
        model.scale = j.at("scale").get<double>();
        model.embedder_fingerprint = j.at("embedder").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("match model " + path.string() + ": " + e.what());
    }
    if (expected_fingerprint && model.embedder_fingerprint != *expected_fingerprint) {
        throw SchemaError("match model was trained on embedder '" + model.embedder_fingerprint +
                          "' but the current embedder is '" + std::string(*expected_fingerprint) + "'");
    }
    return model;
}

}  // namespace s2conv
