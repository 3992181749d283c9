#include "s2conv/memory_selector.hpp"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "s2conv/error.hpp"
#include "s2conv/text.hpp"

namespace s2conv {

namespace {

Eigen::VectorXd to_eigen(const EmbeddingVector& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.values.data(), static_cast<Eigen::Index>(v.dim()));
}

double eigen_cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return a.dot(b) / (na * nb);
}

// Index of the best score; near-ties go to the lexicographically smaller name.
std::size_t argmax_with_tiebreak(const std::vector<std::pair<std::string, double>>& scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        const double diff = scores[i].second - scores[best].second;
        if (diff > kScoreTieTolerance ||
            (std::abs(diff) <= kScoreTieTolerance && scores[i].first < scores[best].first)) {
            best = i;
        }
    }
    return best;
}

void check_reranker(const MemoryReranker* reranker, const Embedder& embedder) {
    if (reranker && (reranker->dim() != embedder.dim() ||
                     reranker->weights.cols() != reranker->weights.rows())) {
        throw DimensionMismatch("reranker is " + std::to_string(reranker->weights.rows()) + "x" +
                                std::to_string(reranker->weights.cols()) + " but the embedder has dim " +
                                std::to_string(embedder.dim()));
    }
}

}  // namespace

MemoryReranker MemoryReranker::identity(std::size_t dim) {
    const auto n = static_cast<Eigen::Index>(dim);
    return {Eigen::MatrixXd::Identity(n, n)};
}

std::string aspect_text(const std::string& aspect, const std::string& content) {
    return aspect + ": " + content;
}

std::string context_query(std::span<const ChatTurn> context_turns, int window) {
    const std::size_t take = std::min<std::size_t>(context_turns.size(),
                                                   static_cast<std::size_t>(std::max(1, window)));
    std::string query;
    for (std::size_t i = context_turns.size() - take; i < context_turns.size(); ++i) {
        if (!query.empty()) {
            query += '\n';
        }
        query += context_turns[i].text;
    }
    return query;
}

MemorySelection select_memory_for_query(const std::string& query, const OrderedTextMap& memory,
                                        const Embedder& embedder, const MemoryReranker* reranker) {
    if (memory.empty()) {
        throw EmptyMemory("memory map has no aspects to select from");
    }
    if (trim(query).empty()) {
        throw EmptyContext("memory selection needs non-empty context");
    }
    check_reranker(reranker, embedder);

    const EmbeddingVector q = embedder.embed(query);
    Eigen::VectorXd projected_q;
    if (reranker) {
        projected_q = reranker->weights * to_eigen(q);
    }

    MemorySelection out;
    for (const auto& [aspect, content] : memory) {
        const EmbeddingVector a = embedder.embed(aspect_text(aspect, content));
        const double score =
            reranker ? eigen_cosine(projected_q, reranker->weights * to_eigen(a)) : cosine(q, a);
        out.scores_all.emplace_back(aspect, score);
    }
    const std::size_t best = argmax_with_tiebreak(out.scores_all);
    out.aspect = out.scores_all[best].first;
    out.score = out.scores_all[best].second;
    out.content = *memory.find(out.aspect);
    return out;
}

MemorySelection select_memory(std::span<const ChatTurn> context_turns, const OrderedTextMap& memory,
                              const Embedder& embedder, int window, const MemoryReranker* reranker) {
    if (memory.empty()) {
        throw EmptyMemory("memory map has no aspects to select from");
    }
    if (context_turns.empty()) {
        throw EmptyContext("memory selection needs at least one context turn");
    }
    return select_memory_for_query(context_query(context_turns, window), memory, embedder, reranker);
}

// ---------------------------------------------------------------- training

namespace {

struct PreparedExample {
    Eigen::VectorXd query;
    Eigen::MatrixXd aspects;  // one row per aspect
    Eigen::Index gold = 0;
};

std::vector<PreparedExample> prepare(std::span<const SelectorExample> examples, const Embedder& embedder) {
    std::vector<PreparedExample> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        if (ex.memory.empty()) {
            throw EmptyMemory("training example has an empty memory map");
        }
        PreparedExample p;
        p.query = to_eigen(embedder.embed(ex.context));
        p.aspects.resize(static_cast<Eigen::Index>(ex.memory.size()), p.query.size());
        bool found = false;
        Eigen::Index row = 0;
        for (const auto& [aspect, content] : ex.memory) {
            const auto a = to_eigen(embedder.embed(aspect_text(aspect, content)));
            if (a.size() != p.query.size()) {
                throw DimensionMismatch("aspect and query embeddings differ in dimension");
            }
            p.aspects.row(row) = a.transpose();
            if (aspect == ex.gold_aspect) {
                p.gold = row;
                found = true;
            }
            ++row;
        }
        if (!found) {
            throw SchemaError("gold aspect '" + ex.gold_aspect + "' is not in the example's memory");
        }
        out.push_back(std::move(p));
    }
    return out;
}

// Mean cross-entropy; accumulates the gradient into `grad` when non-null.
double loss_and_gradient(const Eigen::MatrixXd& w, const std::vector<PreparedExample>& data,
                         Eigen::MatrixXd* grad) {
    if (grad) {
        grad->setZero(w.rows(), w.cols());
    }
    double total = 0.0;
    for (const auto& ex : data) {
        const Eigen::VectorXd u = w * ex.query;
        const Eigen::MatrixXd v = ex.aspects * w.transpose();  // rows are W a_j
        const double nu = u.norm();
        const Eigen::Index k = v.rows();
        Eigen::VectorXd cos(k);
        Eigen::VectorXd nv(k);
        for (Eigen::Index j = 0; j < k; ++j) {
            nv(j) = v.row(j).norm();
            cos(j) = (nu == 0.0 || nv(j) == 0.0) ? 0.0 : v.row(j).dot(u) / (nu * nv(j));
        }
        const Eigen::VectorXd logits = kRerankerLogitScale * cos;
        const double max_logit = logits.maxCoeff();
        const Eigen::VectorXd expd = (logits.array() - max_logit).exp();
        const double z = expd.sum();
        total += -(logits(ex.gold) - max_logit - std::log(z));
        if (!grad || nu == 0.0) {
            continue;
        }
        const Eigen::VectorXd p = expd / z;
        for (Eigen::Index j = 0; j < k; ++j) {
            if (nv(j) == 0.0) {
                continue;
            }
            const double g = kRerankerLogitScale * (p(j) - (j == ex.gold ? 1.0 : 0.0));
            const Eigen::VectorXd vj = v.row(j).transpose();
            const Eigen::VectorXd dc_du = vj / (nu * nv(j)) - cos(j) * u / (nu * nu);
            const Eigen::VectorXd dc_dv = u / (nu * nv(j)) - cos(j) * vj / (nv(j) * nv(j));
            grad->noalias() += g * (dc_du * ex.query.transpose());
            grad->noalias() += g * (dc_dv * ex.aspects.row(j));
        }
    }
    const auto n = static_cast<double>(data.size());
    if (grad) {
        *grad /= n;
    }
    return total / n;
}

}  // namespace

double reranker_loss(const MemoryReranker& reranker, std::span<const SelectorExample> examples,
                     const Embedder& embedder) {
    check_reranker(&reranker, embedder);
    return loss_and_gradient(reranker.weights, prepare(examples, embedder), nullptr);
}

RerankerTraining train_selector_reranker(std::span<const SelectorExample> examples,
                                         const Embedder& embedder, int epochs, double lr) {
    if (examples.empty()) {
        throw EmptyInput("reranker training needs at least one example");
    }
    const auto data = prepare(examples, embedder);
    RerankerTraining out{MemoryReranker::identity(embedder.dim()), {}};

    Eigen::MatrixXd w = out.reranker.weights;
    Eigen::MatrixXd grad;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < epochs; ++epoch) {
        const double loss = loss_and_gradient(w, data, &grad);
        out.loss_trace.push_back(loss);
        if (loss < best_loss) {
            best_loss = loss;
            out.reranker.weights = w;
        }
        w -= lr * grad;
    }
    const double final_loss = loss_and_gradient(w, data, nullptr);
    out.loss_trace.push_back(final_loss);
    if (final_loss < best_loss) {
        out.reranker.weights = w;
    }
    return out;
}

void save_reranker(const MemoryReranker& reranker, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["dim"] = reranker.dim();
    auto& rows = j["rows"] = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < reranker.weights.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(reranker.weights.cols()));
        for (Eigen::Index c = 0; c < reranker.weights.cols(); ++c) {
            row[static_cast<std::size_t>(c)] = reranker.weights(r, c);
        }
        rows.push_back(row);
    }
    write_text_file(path, j.dump() + "\n");
}

MemoryReranker load_reranker(const std::filesystem::path& path) {
    try {
        const auto j = nlohmann::json::parse(read_text_file(path));
        const auto dim = j.at("dim").get<Eigen::Index>();
        const auto& rows = j.at("rows");
        if (static_cast<Eigen::Index>(rows.size()) != dim) {
            throw SchemaError("reranker has " + std::to_string(rows.size()) + " rows, expected " +
                              std::to_string(dim));
        }
        MemoryReranker out{Eigen::MatrixXd(dim, dim)};
        for (Eigen::Index r = 0; r < dim; ++r) {
            const auto row = rows.at(static_cast<std::size_t>(r)).get<std::vector<double>>();
            if (static_cast<Eigen::Index>(row.size()) != dim) {
                throw SchemaError("reranker row " + std::to_string(r) + " has the wrong length");
            }
            for (Eigen::Index c = 0; c < dim; ++c) {
                out.weights(r, c) = row[static_cast<std::size_t>(c)];
            }
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("reranker file " + path.string() + ": " + e.what());
    }
}

}  // namespace s2conv
