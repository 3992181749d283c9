#pragma once

#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "s2conv/character.hpp"
#include "s2conv/llm.hpp"
#include "s2conv/matcher.hpp"
#include "s2conv/mock_backend.hpp"

namespace s2conv::testing {

// A matcher problem with a known answer. The bank is the 64-character mock
// bank; seekers whose bank position is 3 mod 4 are held out.
struct PlantedProblem {
    CharacterBank bank;
    HashingEmbedder embedder;
    MatchModel planted;
    std::vector<std::string> train_seekers;
    std::vector<std::string> held_out_seekers;
    std::vector<MatchExample> examples;
};

/**
 * Planted W is a sum of four rank-one terms, one per (N/S, T/F) quadrant:
 * a seeker direction built from the trait words the mock uses for those two
 * dimensions, times the features of one designated supporter. Seekers thus
 * prefer the designated supporter of their quadrant. Labels are the planted
 * prediction plus N(0, noise) for every ordered pair with a training seeker.
 */
inline PlantedProblem make_planted_problem(double noise_sd, double alpha = 8.0) {
    PlantedProblem p{generate_bank(*make_mock_backend(), 4, 7), HashingEmbedder{}, {}, {}, {}, {}};
    const auto& emb = p.embedder;
    const auto dim = static_cast<Eigen::Index>(emb.dim());

    const char* traits[2][2][2] = {{{"practical", "observant"}, {"imaginative", "curious"}},
                                   {{"logical", "candid"}, {"empathetic", "warm"}}};
    Eigen::VectorXd dir[2];
    for (int d = 0; d < 2; ++d) {
        dir[d] = Eigen::VectorXd::Zero(dim);
        for (int w = 0; w < 2; ++w) {
            dir[d](static_cast<Eigen::Index>(emb.bucket(traits[d][0][w]))) += 1.0;
            dir[d](static_cast<Eigen::Index>(emb.bucket(traits[d][1][w]))) -= 1.0;
        }
    }

    p.planted = MatchModel::initial(emb.dim(), emb.fingerprint());
    p.planted.w.setZero();
    const char* designated[4] = {"ISFP-001", "ENTJ-001", "ESTP-001", "INFJ-001"};
    int g = 0;
    for (const int sn : {+1, -1}) {
        for (const int tf : {+1, -1}) {
            const Eigen::VectorXd a = sn * dir[0] + tf * dir[1];
            const auto f = featurize(p.bank.at(designated[g++]), emb);
            const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(f.values.data(), dim);
            p.planted.w += alpha * a * v.transpose();
        }
    }

    const auto& chars = p.bank.characters();
    for (std::size_t i = 0; i < chars.size(); ++i) {
        (i % 4 == 3 ? p.held_out_seekers : p.train_seekers).push_back(chars[i].id);
    }
    std::mt19937_64 rng(11);
    std::normal_distribution<double> noise(0.0, noise_sd > 0 ? noise_sd : 1.0);
    for (const auto& s : p.train_seekers) {
        const auto fs = featurize(p.bank.at(s), emb);
        for (const auto& u : chars) {
            if (u.id == s) continue;
            double y = predict(p.planted, fs, featurize(u, emb));
            if (noise_sd > 0) y += noise(rng);
            p.examples.push_back({s, u.id, y});
        }
    }
    return p;
}

}  // namespace s2conv::testing
