#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include "field.hpp"
#include "smoothstep.hpp"

namespace massgrid {

// Radial expression mini-language used for conformal factors and potentials.
//
//   expr   := term { ('+' | '-') term }
//   term   := factor { '*' factor }
//   factor := NUMBER | 'const' '(' NUMBER ')'
//           | 'smoothstep_bump' '(' c1,..,cn, r0, r1, amp ')'
//           | 'smoothstep_ramp' '(' c1,..,cn, r0, r1, amp ')'
//           | '-' factor | '(' expr ')'
//
// Centers are absolute coordinates (same units as L); radii use the torus
// distance. smoothstep_bump is a C^2 bump supported on the annulus (r0, r1);
// smoothstep_ramp is a C^2 step: 0 for r <= r0, amp for r >= r1. The short
// aliases `bump` and `ramp` are accepted on input; serialization always emits
// the long names, so parse(serialize(e)) round-trips exactly.

class Expr;
using ExprPtr = std::shared_ptr<const Expr>;

class Expr {
public:
    enum class Kind { Const, Bump, Ramp, Sum, Prod };

    Kind kind = Kind::Const;
    double value = 0.0;               // Const
    std::vector<double> center;       // Bump/Ramp
    double r0 = 0.0, r1 = 0.0, amp = 0.0;
    std::vector<ExprPtr> kids;        // Sum/Prod
    std::vector<int> sign;            // Sum: +1/-1 per child

    static ExprPtr constant(double c) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::Const;
        e->value = c;
        return e;
    }

    static ExprPtr radial(Kind k, std::vector<double> c, double r0, double r1,
                          double amp) {
        if (!(r0 >= 0.0) || !(r1 > r0))
            throw ConfigError("radial primitive needs 0 <= r0 < r1");
        auto e = std::make_shared<Expr>();
        e->kind = k;
        e->center = std::move(c);
        e->r0 = r0;
        e->r1 = r1;
        e->amp = amp;
        return e;
    }

    static ExprPtr sum(std::vector<ExprPtr> kids, std::vector<int> sign) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::Sum;
        e->kids = std::move(kids);
        e->sign = std::move(sign);
        return e;
    }

    static ExprPtr prod(std::vector<ExprPtr> kids) {
        auto e = std::make_shared<Expr>();
        e->kind = Kind::Prod;
        e->kids = std::move(kids);
        return e;
    }

    /// Evaluate at lattice node i.
    double eval(const TorusGrid& g, std::size_t i) const {
        switch (kind) {
        case Kind::Const:
            return value;
        case Kind::Bump:
        case Kind::Ramp: {
            std::array<double, kMaxDim> c{};
            if (center.size() != std::size_t(g.n))
                throw ConfigError("radial primitive has " +
                                  std::to_string(center.size()) +
                                  " center coordinates, grid dimension is " +
                                  std::to_string(g.n));
            for (int a = 0; a < g.n; ++a) c[std::size_t(a)] = center[std::size_t(a)];
            double r = g.r_to_point(i, c);
            double t = (r - r0) / (r1 - r0);
            return amp * (kind == Kind::Bump ? smoothbump(t) : smoothstep(t));
        }
        case Kind::Sum: {
            double s = 0.0;
            for (std::size_t k = 0; k < kids.size(); ++k)
                s += sign[k] * kids[k]->eval(g, i);
            return s;
        }
        case Kind::Prod: {
            double s = 1.0;
            for (const auto& k : kids) s *= k->eval(g, i);
            return s;
        }
        }
        return 0.0;
    }

    /// Largest center-to-primitive outer radius; used for validation only.
    bool is_zero() const { return kind == Kind::Const && value == 0.0; }
};

inline ScalarField sample(const ExprPtr& e, const GridPtr& g) {
    ScalarField f(g);
    if (!e) return f;
    for (std::size_t i = 0; i < g->nodes; ++i) f.v[i] = e->eval(*g, i);
    return f;
}

namespace detail {

class ExprParser {
public:
    explicit ExprParser(const std::string& s) : s_(s) {}

    ExprPtr parse() {
        skip();
        if (pos_ >= s_.size()) return Expr::constant(0.0); // empty -> 0
        ExprPtr e = expr();
        skip();
        if (pos_ != s_.size())
            fail("trailing characters");
        return e;
    }

private:
    const std::string& s_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& what) {
        throw ConfigError("expression parse error at offset " +
                          std::to_string(pos_) + ": " + what + " in '" + s_ + "'");
    }

    void skip() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_])))
            ++pos_;
    }

    bool eat(char c) {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    ExprPtr expr() {
        std::vector<ExprPtr> kids;
        std::vector<int> sign;
        kids.push_back(term());
        sign.push_back(1);
        for (;;) {
            if (eat('+')) {
                kids.push_back(term());
                sign.push_back(1);
            } else if (eat('-')) {
                kids.push_back(term());
                sign.push_back(-1);
            } else
                break;
        }
        if (kids.size() == 1) return kids[0];
        return Expr::sum(std::move(kids), std::move(sign));
    }

    ExprPtr term() {
        std::vector<ExprPtr> kids;
        kids.push_back(factor());
        while (eat('*')) kids.push_back(factor());
        if (kids.size() == 1) return kids[0];
        return Expr::prod(std::move(kids));
    }

    ExprPtr factor() {
        skip();
        if (pos_ >= s_.size()) fail("unexpected end of input");
        char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            ExprPtr e = expr();
            if (!eat(')')) fail("expected ')'");
            return e;
        }
        if (c == '-') {
            ++pos_;
            skip();
            // fold the sign into a numeric literal so canonical forms like
            // -1*bump(...) re-parse to the same tree (serialize idempotence)
            if (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) ||
                                     s_[pos_] == '.'))
                return Expr::constant(-number());
            return Expr::prod({Expr::constant(-1.0), factor()});
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.')
            return Expr::constant(number());
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::string id = ident();
            if (!eat('(')) fail("expected '(' after '" + id + "'");
            std::vector<double> args = number_list();
            if (!eat(')')) fail("expected ')' after arguments of '" + id + "'");
            if (id == "const") {
                if (args.size() != 1) fail("const() takes one argument");
                return Expr::constant(args[0]);
            }
            bool bump = (id == "smoothstep_bump" || id == "bump");
            bool ramp = (id == "smoothstep_ramp" || id == "ramp");
            if (!bump && !ramp) fail("unknown primitive '" + id + "'");
            if (args.size() < 4)
                fail(id + "() needs center coords plus r0, r1, amplitude");
            double amp = args.back();
            double r1 = args[args.size() - 2];
            double r0 = args[args.size() - 3];
            args.resize(args.size() - 3);
            return Expr::radial(bump ? Expr::Kind::Bump : Expr::Kind::Ramp,
                                std::move(args), r0, r1, amp);
        }
        fail(std::string("unexpected character '") + c + "'");
    }

    std::string ident() {
        std::size_t b = pos_;
        while (pos_ < s_.size() &&
               (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
            ++pos_;
        return s_.substr(b, pos_ - b);
    }

    double number() {
        skip();
        const char* begin = s_.c_str() + pos_;
        char* end = nullptr;
        double val = std::strtod(begin, &end);
        if (end == begin) fail("expected a number");
        pos_ += std::size_t(end - begin);
        return val;
    }

    std::vector<double> number_list() {
        std::vector<double> out;
        skip();
        if (pos_ < s_.size() && s_[pos_] == ')') return out;
        out.push_back(signed_number());
        while (eat(',')) out.push_back(signed_number());
        return out;
    }

    double signed_number() {
        skip();
        bool neg = eat('-');
        double v = number();
        return neg ? -v : v;
    }
};

inline std::string fmt_num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

} // namespace detail

inline ExprPtr parse_expression(const std::string& s) {
    return detail::ExprParser(s).parse();
}

/// Canonical serialization; parse(serialize(e)) reproduces the same string.
inline std::string serialize(const ExprPtr& e) {
    using detail::fmt_num;
    if (!e) return "0";
    switch (e->kind) {
    case Expr::Kind::Const:
        return fmt_num(e->value);
    case Expr::Kind::Bump:
    case Expr::Kind::Ramp: {
        std::string s =
            e->kind == Expr::Kind::Bump ? "smoothstep_bump(" : "smoothstep_ramp(";
        for (double c : e->center) s += fmt_num(c) + ", ";
        s += fmt_num(e->r0) + ", " + fmt_num(e->r1) + ", " + fmt_num(e->amp) + ")";
        return s;
    }
    case Expr::Kind::Sum: {
        std::string s;
        for (std::size_t k = 0; k < e->kids.size(); ++k) {
            if (k == 0)
                s += (e->sign[k] < 0 ? "-" : "");
            else
                s += (e->sign[k] < 0 ? " - " : " + ");
            s += serialize(e->kids[k]);
        }
        return s;
    }
    case Expr::Kind::Prod: {
        std::string s;
        for (std::size_t k = 0; k < e->kids.size(); ++k) {
            if (k) s += "*";
            bool paren = e->kids[k]->kind == Expr::Kind::Sum;
            s += paren ? "(" + serialize(e->kids[k]) + ")" : serialize(e->kids[k]);
        }
        return s;
    }
    }
    return "0";
}

} // namespace massgrid
