#include "handleforge/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "handleforge/error.hpp"

namespace handleforge {

double arap_loss_metric(const Mesh& rest, const std::vector<Mat>& animated,
                        const EdgeSet& edges) {
    require(!animated.empty(), "arap_loss_metric: no frames");
    require(edges.count() > 0, "arap_loss_metric: no edges");
    const int V = rest.vertices.rows();

    double total = 0.0;
    for (const Mat& pos : animated) {
        require(pos.rows() == V && pos.cols() == 3,
                "arap_loss_metric: frame shape differs from rest mesh");
        for (int e = 0; e < edges.count(); ++e) {
            const int i = edges.edges[e][0];
            const int j = edges.edges[e][1];
            double len2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double d = pos(i, c) - pos(j, c);
                len2 += d * d;
            }
            const double dev = std::sqrt(len2) - edges.rest_lengths[e];
            total += dev * dev;
        }
    }
    return total / (static_cast<double>(animated.size()) * edges.count());
}

namespace {

Eigen::MatrixXd to_eigen(const Mat& m) {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(m.data(), m.rows(), m.cols());
}

// Symmetric PSD square root with negative eigenvalues clipped at zero.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& S) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    Eigen::VectorXd lam = es.eigenvalues();
    for (int i = 0; i < lam.size(); ++i) lam[i] = std::sqrt(std::max(lam[i], 0.0));
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double handle_fid(const Mat& real_samples, const Mat& gen_samples) {
    require(real_samples.rows() >= 2 && gen_samples.rows() >= 2,
            "handle_fid: need at least 2 samples per side");
    require(real_samples.cols() == gen_samples.cols(),
            "handle_fid: sample dimensions differ");

    const Eigen::MatrixXd A = to_eigen(real_samples);
    const Eigen::MatrixXd B = to_eigen(gen_samples);
    const Eigen::VectorXd mu1 = A.colwise().mean();
    const Eigen::VectorXd mu2 = B.colwise().mean();
    const Eigen::MatrixXd Ac = A.rowwise() - mu1.transpose();
    const Eigen::MatrixXd Bc = B.rowwise() - mu2.transpose();
    const Eigen::MatrixXd S1 = Ac.transpose() * Ac / (A.rows() - 1.0);
    const Eigen::MatrixXd S2 = Bc.transpose() * Bc / (B.rows() - 1.0);

    // tr((S1 S2)^{1/2}) computed on the congruent symmetric form.
    const Eigen::MatrixXd r2 = psd_sqrt(S2);
    Eigen::MatrixXd M = r2 * S1 * r2;
    M = 0.5 * (M + M.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    double tr_sqrt = 0.0;
    for (int i = 0; i < es.eigenvalues().size(); ++i)
        tr_sqrt += std::sqrt(std::max(es.eigenvalues()[i], 0.0));

    const double fid =
        (mu1 - mu2).squaredNorm() + S1.trace() + S2.trace() - 2.0 * tr_sqrt;
    return std::max(fid, 0.0);
}

std::string report_json(const MetricsReport& r) {
    nlohmann::json j;
    j["arap_loss"] = r.arap_loss;
    if (r.has_fid)
        j["handle_fid"] = r.fid;
    else
        j["handle_fid"] = nullptr;
    j["frames"] = r.frames;
    j["edges"] = r.edges;
    return j.dump(2) + "\n";
}

void save_report(const MetricsReport& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    require(out.good(), "save_report: cannot open " + path.string());
    out << report_json(r);
    require(out.good(), "save_report: write failed for " + path.string());
}

}  // namespace handleforge
