#include "segpower/covariate_spec.hpp"

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/exponential.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/uniform.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <set>

#include "segpower/errors.hpp"
#include "segpower/format.hpp"

namespace segpower {

namespace {

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    CovariateSpec parse() {
        skip_ws();
        if (pos_ >= text_.size()) throw ParseError(pos_, "empty covariate specification");
        CovariateSpec spec;
        if (std::isalpha(static_cast<unsigned char>(text_[pos_]))) {
            const std::size_t name_pos = pos_;
            const std::string name = identifier();
            skip_ws();
            if (name == "equispaced") {
                spec.source = CovariateSpec::Source::equispaced;
            } else {
                std::size_t arity = 0;
                if (name == "normal") { spec.source = CovariateSpec::Source::normal; arity = 2; }
                else if (name == "uniform") { spec.source = CovariateSpec::Source::uniform; arity = 2; }
                else if (name == "exponential") { spec.source = CovariateSpec::Source::exponential; arity = 1; }
                else if (name == "beta") { spec.source = CovariateSpec::Source::beta; arity = 2; }
                else throw ParseError(name_pos, "unknown distribution '" + name + "'");

                expect('(');
                const std::size_t args_pos = pos_;
                spec.params = number_list();
                expect(')');
                if (spec.params.size() != arity) {
                    throw ParseError(args_pos, name + " takes " + std::to_string(arity) + " argument" +
                                                   (arity == 1 ? "" : "s") + ", got " +
                                                   std::to_string(spec.params.size()));
                }
                check_domain(spec, args_pos);
            }
        } else {
            spec.source = CovariateSpec::Source::explicit_values;
            const std::size_t list_pos = pos_;
            spec.values = number_list();
            std::set<double> distinct(spec.values.begin(), spec.values.end());
            if (distinct.size() < 3) throw ParseError(list_pos, "explicit covariate needs at least 3 distinct values");
        }
        skip_ws();
        if (pos_ != text_.size()) throw ParseError(pos_, "unexpected trailing input");
        return spec;
    }

private:
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    std::string identifier() {
        std::string out;
        while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) {
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text_[pos_]))));
            ++pos_;
        }
        return out;
    }

    void expect(char c) {
        skip_ws();
        if (pos_ >= text_.size() || text_[pos_] != c) {
            throw ParseError(pos_, std::string("expected '") + c + "'");
        }
        ++pos_;
    }

    double number() {
        skip_ws();
        const std::size_t start = pos_;
        std::size_t i = pos_;
        auto digits = [&] {
            const std::size_t d0 = i;
            while (i < text_.size() && std::isdigit(static_cast<unsigned char>(text_[i]))) ++i;
            return i - d0;
        };
        if (i < text_.size() && (text_[i] == '+' || text_[i] == '-')) ++i;
        std::size_t mantissa = digits();
        if (i < text_.size() && text_[i] == '.') {
            ++i;
            mantissa += digits();
        }
        if (mantissa == 0) throw ParseError(start, "expected a number");
        if (i < text_.size() && (text_[i] == 'e' || text_[i] == 'E')) {
            std::size_t j = i + 1;
            if (j < text_.size() && (text_[j] == '+' || text_[j] == '-')) ++j;
            const std::size_t save = i;
            i = j;
            if (digits() == 0) i = save;
        }
        // from_chars rejects a leading '+'.
        std::size_t parse_from = start + (text_[start] == '+' ? 1 : 0);
        double v = 0;
        auto [ptr, ec] = std::from_chars(text_.data() + parse_from, text_.data() + i, v);
        if (ec != std::errc() || ptr != text_.data() + i || !std::isfinite(v)) {
            throw ParseError(start, "malformed number");
        }
        pos_ = i;
        return v;
    }

    std::vector<double> number_list() {
        std::vector<double> out{number()};
        skip_ws();
        while (pos_ < text_.size() && text_[pos_] == ',') {
            ++pos_;
            out.push_back(number());
            skip_ws();
        }
        return out;
    }

    static void check_domain(const CovariateSpec& s, std::size_t pos) {
        const auto& p = s.params;
        switch (s.source) {
            case CovariateSpec::Source::normal:
                if (!(p[1] > 0)) throw ParseError(pos, "normal sd must be > 0");
                break;
            case CovariateSpec::Source::uniform:
                if (!(p[0] < p[1])) throw ParseError(pos, "uniform needs a < b");
                break;
            case CovariateSpec::Source::exponential:
                if (!(p[0] > 0)) throw ParseError(pos, "exponential rate must be > 0");
                break;
            case CovariateSpec::Source::beta:
                if (!(p[0] > 0 && p[1] > 0)) throw ParseError(pos, "beta shapes must be > 0");
                break;
            default:
                break;
        }
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string CovariateSpec::text() const {
    auto join = [](const std::vector<double>& v) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) out += ',';
            out += shortest(v[i]);
        }
        return out;
    };
    switch (source) {
        case Source::equispaced: return "equispaced";
        case Source::normal: return "normal(" + join(params) + ")";
        case Source::uniform: return "uniform(" + join(params) + ")";
        case Source::exponential: return "exponential(" + join(params) + ")";
        case Source::beta: return "beta(" + join(params) + ")";
        case Source::explicit_values: return join(values);
    }
    return {};
}

CovariateSpec parse_covariate_spec(std::string_view text) { return Parser(text).parse(); }

Eigen::VectorXd realize_covariate(const CovariateSpec& spec, Eigen::Index n) {
    using Source = CovariateSpec::Source;
    if (spec.source == Source::explicit_values) {
        if (n != static_cast<Eigen::Index>(spec.values.size())) {
            throw Error(ErrorCode::dimension, "explicit covariate has " + std::to_string(spec.values.size()) +
                                                  " values but n = " + std::to_string(n));
        }
        return Eigen::Map<const Eigen::VectorXd>(spec.values.data(), n);
    }
    if (n < 1) throw Error(ErrorCode::dimension, "covariate realization needs n >= 1");

    Eigen::VectorXd z(n);
    const double nd = static_cast<double>(n);
    if (spec.source == Source::equispaced) {
        for (Eigen::Index i = 0; i < n; ++i) z(i) = static_cast<double>(i + 1) / nd;
        return z;
    }
    const auto& p = spec.params;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double prob = (static_cast<double>(i) + 0.5) / nd;
        switch (spec.source) {
            case Source::normal:
                z(i) = boost::math::quantile(boost::math::normal_distribution<>(p[0], p[1]), prob);
                break;
            case Source::uniform:
                z(i) = boost::math::quantile(boost::math::uniform_distribution<>(p[0], p[1]), prob);
                break;
            case Source::exponential:
                z(i) = boost::math::quantile(boost::math::exponential_distribution<>(p[0]), prob);
                break;
            case Source::beta:
                z(i) = boost::math::quantile(boost::math::beta_distribution<>(p[0], p[1]), prob);
                break;
            default:
                break;
        }
    }
    return z;
}

}  // namespace segpower
