#include "gaqp/aqp.hpp"

#include "gaqp/error.hpp"
#include "gaqp/vae.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

namespace gaqp {

std::string_view to_string(AggregateKind kind)
{
    switch (kind) {
    case AggregateKind::Avg:
        return "AVG";
    case AggregateKind::Sum:
        return "SUM";
    case AggregateKind::Count:
        return "COUNT";
    }
    return "?";
}

std::string_view to_string(CompareOp op)
{
    switch (op) {
    case CompareOp::Eq:
        return "=";
    case CompareOp::Ne:
        return "!=";
    case CompareOp::Lt:
        return "<";
    case CompareOp::Gt:
        return ">";
    case CompareOp::Le:
        return "<=";
    case CompareOp::Ge:
        return ">=";
    }
    return "?";
}

namespace {

std::optional<double> parse_number(std::string_view text)
{
    if (text.empty())
        return std::nullopt;
    if (text.front() == '+')
        text.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v))
        return std::nullopt;
    return v;
}

/*----------------------------------------------------------------------------------------------------------------------
 * Lexer and parser
 *--------------------------------------------------------------------------------------------------------------------*/

enum class Tok { Ident, Number, String, Symbol, End };

struct Token
{
    Tok kind;
    std::string text;
    std::size_t offset;
};

bool ident_start(char c)
{
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}

bool ident_char(char c)
{
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

std::vector<Token> tokenize(std::string_view s)
{
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < s.size()) {
        const char c = s[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        const auto start = i;
        if (ident_start(c)) {
            while (i < s.size() && ident_char(s[i]))
                ++i;
            out.push_back({Tok::Ident, std::string(s.substr(start, i - start)), start});
        } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                   ((c == '-' || c == '+' || c == '.') && i + 1 < s.size() &&
                    (std::isdigit(static_cast<unsigned char>(s[i + 1])) || s[i + 1] == '.'))) {
            ++i;
            while (i < s.size()) {
                const char d = s[i];
                if (std::isdigit(static_cast<unsigned char>(d)) || d == '.') {
                    ++i;
                } else if ((d == 'e' || d == 'E') && i + 1 < s.size()) {
                    ++i;
                    if (s[i] == '-' || s[i] == '+')
                        ++i;
                } else {
                    break;
                }
            }
            const auto text = s.substr(start, i - start);
            if (!parse_number(text))
                throw SyntaxError("malformed number '" + std::string(text) + "'", start);
            out.push_back({Tok::Number, std::string(text), start});
        } else if (c == '\'' || c == '"') {
            std::string value;
            ++i;
            bool closed = false;
            while (i < s.size()) {
                if (s[i] == c) {
                    if (i + 1 < s.size() && s[i + 1] == c) {
                        value += c;
                        i += 2;
                        continue;
                    }
                    ++i;
                    closed = true;
                    break;
                }
                value += s[i++];
            }
            if (!closed)
                throw SyntaxError("unterminated string", start);
            out.push_back({Tok::String, value, start});
        } else {
            static const std::pair<std::string_view, std::string_view> symbols[] = {
                {"<=", "<="}, {">=", ">="}, {"!=", "!="}, {"<>", "!="},       {"==", "="},         {"\xe2\x89\xa0", "!="},
                {"\xe2\x89\xa4", "<="}, {"\xe2\x89\xa5", ">="}, {"=", "="}, {"<", "<"}, {">", ">"}, {"(", "("},
                {")", ")"},   {",", ","},   {"*", "*"},
            };
            bool matched = false;
            for (auto [sym, canon] : symbols) {
                if (s.substr(i, sym.size()) == sym) {
                    out.push_back({Tok::Symbol, std::string(canon), start});
                    i += sym.size();
                    matched = true;
                    break;
                }
            }
            if (!matched)
                throw SyntaxError(std::string("unexpected character '") + c + "'", start);
        }
    }
    out.push_back({Tok::End, "", s.size()});
    return out;
}

bool iequals(std::string_view a, std::string_view b)
{
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::toupper(static_cast<unsigned char>(x)) == std::toupper(static_cast<unsigned char>(y));
           });
}

bool is_keyword(std::string_view word)
{
    for (auto kw : {"SELECT", "FROM", "WHERE", "GROUP", "BY", "AND", "OR"})
        if (iequals(word, kw))
            return true;
    return false;
}

class Parser
{
public:
    explicit Parser(std::string_view text) : toks_(tokenize(text)) {}

    QueryAst parse()
    {
        QueryAst q;
        keyword("SELECT");
        while (true) {
            if (is_aggregate()) {
                aggregate(q);
                break;
            }
            q.select_attributes.push_back(ident("attribute or aggregate"));
            symbol(",");
        }
        keyword("FROM");
        q.table = ident("table name");
        if (at_keyword("WHERE")) {
            ++pos_;
            q.filter = or_expr();
        }
        if (at_keyword("GROUP")) {
            ++pos_;
            keyword("BY");
            q.group_by.push_back(ident("attribute"));
            while (at_symbol(",")) {
                ++pos_;
                q.group_by.push_back(ident("attribute"));
            }
        }
        if (peek().kind != Tok::End)
            fail("unexpected '" + peek().text + "'");
        return q;
    }

private:
    const Token &peek(std::size_t ahead = 0) const { return toks_[std::min(pos_ + ahead, toks_.size() - 1)]; }

    [[noreturn]] void fail(const std::string &what) const { throw SyntaxError(what, peek().offset); }

    bool at_keyword(std::string_view kw) const { return peek().kind == Tok::Ident && iequals(peek().text, kw); }
    bool at_symbol(std::string_view sym) const { return peek().kind == Tok::Symbol && peek().text == sym; }

    void keyword(std::string_view kw)
    {
        if (!at_keyword(kw))
            fail("expected " + std::string(kw));
        ++pos_;
    }

    void symbol(std::string_view sym)
    {
        if (!at_symbol(sym))
            fail("expected '" + std::string(sym) + "'");
        ++pos_;
    }

    std::string ident(std::string_view what)
    {
        if (peek().kind != Tok::Ident || is_keyword(peek().text))
            fail("expected " + std::string(what));
        return toks_[pos_++].text;
    }

    bool is_aggregate() const
    {
        if (peek().kind != Tok::Ident || peek(1).kind != Tok::Symbol || peek(1).text != "(")
            return false;
        return iequals(peek().text, "AVG") || iequals(peek().text, "SUM") || iequals(peek().text, "COUNT");
    }

    void aggregate(QueryAst &q)
    {
        const auto name = toks_[pos_++].text;
        q.aggregate = iequals(name, "AVG") ? AggregateKind::Avg
                      : iequals(name, "SUM") ? AggregateKind::Sum
                                             : AggregateKind::Count;
        symbol("(");
        if (at_symbol("*")) {
            if (q.aggregate != AggregateKind::Count)
                fail(std::string(to_string(q.aggregate)) + " needs a measure attribute");
            ++pos_;
        } else {
            auto m = ident("measure attribute");
            if (q.aggregate != AggregateKind::Count)
                q.measure = std::move(m);
        }
        symbol(")");
    }

    Expr or_expr()
    {
        Expr first = and_expr();
        if (!at_keyword("OR"))
            return first;
        Expr e;
        e.kind = Expr::Kind::Or;
        e.children.push_back(std::move(first));
        while (at_keyword("OR")) {
            ++pos_;
            e.children.push_back(and_expr());
        }
        return e;
    }

    Expr and_expr()
    {
        Expr first = comparison();
        if (!at_keyword("AND"))
            return first;
        Expr e;
        e.kind = Expr::Kind::And;
        e.children.push_back(std::move(first));
        while (at_keyword("AND")) {
            ++pos_;
            e.children.push_back(comparison());
        }
        return e;
    }

    Expr comparison()
    {
        if (at_symbol("(")) {
            ++pos_;
            Expr inner = or_expr();
            symbol(")");
            return inner;
        }
        Expr e;
        e.kind = Expr::Kind::Compare;
        e.attribute = ident("attribute");
        if (peek().kind != Tok::Symbol)
            fail("expected comparison operator");
        const auto &op = peek().text;
        if (op == "=")
            e.op = CompareOp::Eq;
        else if (op == "!=")
            e.op = CompareOp::Ne;
        else if (op == "<")
            e.op = CompareOp::Lt;
        else if (op == ">")
            e.op = CompareOp::Gt;
        else if (op == "<=")
            e.op = CompareOp::Le;
        else if (op == ">=")
            e.op = CompareOp::Ge;
        else
            fail("expected comparison operator");
        ++pos_;
        const auto &lit = peek();
        if (lit.kind == Tok::Number || (lit.kind == Tok::Ident && !is_keyword(lit.text)))
            e.literal = {lit.text, false};
        else if (lit.kind == Tok::String)
            e.literal = {lit.text, true};
        else
            fail("expected literal");
        ++pos_;
        return e;
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
};

std::string quote(const std::string &s)
{
    std::string out = "'";
    for (char c : s) {
        if (c == '\'')
            out += '\'';
        out += c;
    }
    return out + "'";
}

template <typename T>
bool compare(const T &a, CompareOp op, const T &b)
{
    switch (op) {
    case CompareOp::Eq:
        return a == b;
    case CompareOp::Ne:
        return a != b;
    case CompareOp::Lt:
        return a < b;
    case CompareOp::Gt:
        return a > b;
    case CompareOp::Le:
        return a <= b;
    case CompareOp::Ge:
        return a >= b;
    }
    return false;
}

} // namespace

QueryAst parse_query(std::string_view text)
{
    return Parser(text).parse();
}

std::string to_string(const Expr &expr)
{
    if (expr.kind == Expr::Kind::Compare) {
        const auto lit = expr.literal.quoted ? quote(expr.literal.text) : expr.literal.text;
        return expr.attribute + " " + std::string(to_string(expr.op)) + " " + lit;
    }
    std::string out;
    const auto sep = expr.kind == Expr::Kind::And ? " AND " : " OR ";
    for (std::size_t i = 0; i != expr.children.size(); ++i) {
        if (i)
            out += sep;
        const auto &c = expr.children[i];
        out += c.kind == Expr::Kind::Compare ? to_string(c) : "(" + to_string(c) + ")";
    }
    return out;
}

std::string to_string(const QueryAst &q)
{
    std::string out = "SELECT ";
    for (const auto &a : q.select_attributes)
        out += a + ", ";
    out += std::string(to_string(q.aggregate)) + "(" + (q.measure ? *q.measure : "*") + ") FROM " + q.table;
    if (q.filter)
        out += " WHERE " + to_string(*q.filter);
    if (!q.group_by.empty()) {
        out += " GROUP BY ";
        for (std::size_t i = 0; i != q.group_by.size(); ++i)
            out += (i ? ", " : "") + q.group_by[i];
    }
    return out;
}

/*----------------------------------------------------------------------------------------------------------------------
 * Binding and evaluation
 *--------------------------------------------------------------------------------------------------------------------*/

BoundQuery::BoundQuery(const QueryAst &query, const Schema &schema) : ast_(query)
{
    if (query.measure && query.aggregate != AggregateKind::Count) {
        const auto idx = schema.require(*query.measure);
        measure_ = idx;
        const auto &attr = schema[idx];
        measure_values_.resize(attr.domain_size());
        for (Code c = 0; c != attr.domain_size(); ++c) {
            measure_values_[c] = attr.representative(c);
            if (!std::isfinite(measure_values_[c]))
                throw SchemaError("measure attribute " + attr.name + " is not numeric");
        }
    } else if (query.aggregate != AggregateKind::Count) {
        throw SchemaError(std::string(to_string(query.aggregate)) + " needs a measure attribute");
    }
    for (const auto &a : query.select_attributes)
        schema.require(a);
    for (const auto &g : query.group_by)
        group_.push_back(schema.require(g));
    if (query.filter)
        filter_ = compile(*query.filter, schema);
}

BoundQuery::Node BoundQuery::compile(const Expr &expr, const Schema &schema) const
{
    Node node{expr.kind, 0, {}, {}};
    if (expr.kind != Expr::Kind::Compare) {
        for (const auto &c : expr.children)
            node.children.push_back(compile(c, schema));
        return node;
    }
    node.attribute = schema.require(expr.attribute);
    const auto &attr = schema[node.attribute];
    const auto lit_num = parse_number(expr.literal.text);
    node.mask.resize(attr.domain_size());
    for (Code c = 0; c != attr.domain_size(); ++c) {
        if (attr.kind == AttributeKind::Numeric) {
            if (!lit_num)
                throw SchemaError("attribute " + attr.name + " is numeric but '" + expr.literal.text +
                                  "' is not a number");
            node.mask[c] = compare(attr.representative(c), expr.op, *lit_num);
        } else {
            const auto &entry = attr.dictionary[c];
            const auto entry_num = parse_number(entry);
            if (lit_num && entry_num)
                node.mask[c] = compare(*entry_num, expr.op, *lit_num);
            else
                node.mask[c] = compare(std::string_view(entry), expr.op, std::string_view(expr.literal.text));
        }
    }
    return node;
}

bool BoundQuery::eval(const Node &node, const Relation *rel, std::size_t row, std::span<const Code> tuple) const
{
    switch (node.kind) {
    case Expr::Kind::Compare: {
        const auto code = rel ? rel->at(row, node.attribute) : tuple[node.attribute];
        return code < node.mask.size() && node.mask[code];
    }
    case Expr::Kind::And:
        for (const auto &c : node.children)
            if (!eval(c, rel, row, tuple))
                return false;
        return true;
    case Expr::Kind::Or:
        for (const auto &c : node.children)
            if (eval(c, rel, row, tuple))
                return true;
        return false;
    }
    return false;
}

bool BoundQuery::matches(std::span<const Code> tuple) const
{
    return !filter_ || eval(*filter_, nullptr, 0, tuple);
}

bool BoundQuery::matches(const Relation &relation, std::size_t row) const
{
    return !filter_ || eval(*filter_, &relation, row, {});
}

const GroupValue *AggregateEstimate::find(const Tuple &key) const
{
    const auto it = std::lower_bound(groups.begin(), groups.end(), key,
                                     [](const GroupValue &g, const Tuple &k) { return g.key < k; });
    return it != groups.end() && it->key == key ? &*it : nullptr;
}

namespace {

struct Accumulator
{
    std::size_t count = 0;
    double weight = 0.0;
    double sum = 0.0;    ///< sum of x (weighted: sum of w x)
    double sum_sq = 0.0; ///< sum of x^2 (weighted: sum of w x^2)
    double w_sq = 0.0;   ///< sum of w^2 over satisfying rows
};

std::string group_label(const Schema &schema, const std::vector<std::size_t> &attrs, const Tuple &key)
{
    std::string out;
    for (std::size_t i = 0; i != attrs.size(); ++i) {
        if (i)
            out += '|';
        out += schema[attrs[i]].label(key[i]);
    }
    return out;
}

std::map<Tuple, Accumulator> accumulate(const Relation &rel, const BoundQuery &q, std::span<const double> weights)
{
    std::map<Tuple, Accumulator> groups;
    const auto &gidx = q.group_indices();
    const auto measure = q.measure_index();
    Tuple key(gidx.size());
    for (std::size_t i = 0; i != rel.num_rows(); ++i) {
        if (!q.matches(rel, i))
            continue;
        for (std::size_t g = 0; g != gidx.size(); ++g)
            key[g] = rel.at(i, gidx[g]);
        auto &acc = groups[key];
        const double x = measure ? q.measure_value(rel.at(i, *measure)) : 1.0;
        const double w = weights.empty() ? 1.0 : weights[i];
        ++acc.count;
        if (weights.empty()) {
            acc.sum += x;
            acc.sum_sq += x * x;
        } else {
            acc.weight += w;
            acc.sum += w * x;
            acc.sum_sq += w * x * x;
            acc.w_sq += w * w;
        }
    }
    return groups;
}

} // namespace

AggregateEstimate evaluate_exact(const Relation &relation, const QueryAst &query)
{
    return evaluate_exact(relation, BoundQuery(query, relation.schema()));
}

AggregateEstimate evaluate_exact(const Relation &relation, const BoundQuery &query)
{
    AggregateEstimate out;
    for (const auto &[key, acc] : accumulate(relation, query, {})) {
        GroupValue g;
        g.key = key;
        g.label = group_label(relation.schema(), query.group_indices(), key);
        g.support = acc.count;
        switch (query.ast().aggregate) {
        case AggregateKind::Count:
            g.value = static_cast<double>(acc.count);
            break;
        case AggregateKind::Sum:
            g.value = acc.sum;
            break;
        case AggregateKind::Avg:
            g.value = acc.sum / static_cast<double>(acc.count);
            break;
        }
        out.groups.push_back(std::move(g));
    }
    return out;
}

AggregateEstimate estimate_from_sample(const Relation &sample, const QueryAst &query, std::size_t population_n,
                                       std::span<const double> weights)
{
    return estimate_from_sample(sample, BoundQuery(query, sample.schema()), population_n, weights);
}

AggregateEstimate estimate_from_sample(const Relation &sample, const BoundQuery &query, std::size_t population_n,
                                       std::span<const double> weights)
{
    AggregateEstimate out;
    const auto m = sample.num_rows();
    if (m == 0)
        return out;
    if (!weights.empty() && weights.size() != m)
        throw DataError("need one weight per sample row");
    const double n_pop = static_cast<double>(population_n);
    const double md = static_cast<double>(m);
    const double scale = n_pop / md;
    const auto kind = query.ast().aggregate;

    double total_w = 0.0;
    double total_w_sq = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0))
            throw DataError("sample weights must be non-negative");
        total_w += w;
        total_w_sq += w * w;
    }
    if (!weights.empty() && total_w <= 0.0)
        return out;

    for (const auto &[key, acc] : accumulate(sample, query, weights)) {
        GroupValue g;
        g.key = key;
        g.label = group_label(sample.schema(), query.group_indices(), key);
        g.support = acc.count;
        const double c = static_cast<double>(acc.count);
        if (weights.empty()) {
            if (kind == AggregateKind::Avg) {
                g.value = acc.sum / c;
                const double var = acc.count > 1 ? std::max(0.0, (acc.sum_sq - c * g.value * g.value) / (c - 1)) : 0.0;
                g.half_width = 1.96 * std::sqrt(var) / std::sqrt(c);
            } else {
                // Per-row estimator y_i = N * x_i * 1[row i satisfies], whose mean is the estimate.
                const double s = kind == AggregateKind::Count ? c : acc.sum;
                const double s_sq = kind == AggregateKind::Count ? c : acc.sum_sq;
                g.value = scale * s;
                const double mean = n_pop * s / md;
                const double var =
                    m > 1 ? std::max(0.0, (n_pop * n_pop * s_sq - md * mean * mean) / (md - 1)) : 0.0;
                g.half_width = 1.96 * std::sqrt(var) / std::sqrt(md);
            }
        } else {
            if (acc.weight <= 0.0)
                continue;
            if (kind == AggregateKind::Avg) {
                g.value = acc.sum / acc.weight;
                const double var = std::max(0.0, acc.sum_sq / acc.weight - g.value * g.value);
                const double ess = acc.weight * acc.weight / acc.w_sq;
                g.half_width = 1.96 * std::sqrt(var / ess);
            } else {
                const double s = kind == AggregateKind::Count ? acc.weight : acc.sum;
                const double s_sq = kind == AggregateKind::Count ? acc.weight : acc.sum_sq;
                g.value = n_pop * s / total_w;
                const double var = std::max(0.0, n_pop * n_pop * s_sq / total_w - g.value * g.value);
                const double ess = total_w * total_w / total_w_sq;
                g.half_width = 1.96 * std::sqrt(var / ess);
            }
        }
        out.groups.push_back(std::move(g));
    }
    return out;
}

double selectivity(const Relation &relation, const BoundQuery &query)
{
    if (relation.num_rows() == 0)
        return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i != relation.num_rows(); ++i)
        hits += query.matches(relation, i);
    return static_cast<double>(hits) / static_cast<double>(relation.num_rows());
}

/*----------------------------------------------------------------------------------------------------------------------
 * Error metrics
 *--------------------------------------------------------------------------------------------------------------------*/

double relative_error(double truth, double estimate)
{
    return std::abs(estimate - truth) / std::abs(truth);
}

GroupError group_relative_error(const AggregateEstimate &truth, const AggregateEstimate &estimate)
{
    GroupError out;
    double sum = 0.0;
    for (const auto &g : truth.groups) {
        if (g.value == 0.0) {
            ++out.excluded;
            continue;
        }
        ++out.true_groups;
        if (const auto *e = estimate.find(g.key)) {
            ++out.estimated;
            sum += relative_error(g.value, e->value);
        }
    }
    if (out.true_groups == 0)
        return out;
    const double r = static_cast<double>(out.true_groups);
    out.value = (static_cast<double>(out.true_groups - out.estimated) + sum) / r;
    return out;
}

double average_relative_error(std::span<const double> errors)
{
    if (errors.empty())
        return 0.0;
    return std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
}

double median(std::vector<double> values)
{
    if (values.empty())
        return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ErrorReport evaluate_workload(const Relation &relation, std::span<const std::string> queries,
                              std::span<const Relation> dataset_samples, std::span<const Relation> model_samples,
                              std::size_t population_n)
{
    if (dataset_samples.size() != model_samples.size() || dataset_samples.empty())
        throw DataError("need the same positive number of dataset and model samples");
    const double reps = static_cast<double>(dataset_samples.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    ErrorReport report;
    std::vector<double> reds, rel_d, rel_m;
    for (std::size_t qi = 0; qi != queries.size(); ++qi) {
        const auto ast = parse_query(queries[qi]);
        const BoundQuery bound(ast, relation.schema());
        const auto truth = evaluate_exact(relation, bound);
        const auto check = group_relative_error(truth, truth);
        if (!check.value) {
            ++report.excluded;
            continue;
        }
        ErrorRow row;
        row.query_id = qi;
        row.query = queries[qi];
        row.selectivity = selectivity(relation, bound);
        const bool grouped = !ast.group_by.empty();
        row.truth = grouped ? nan : truth.groups.front().value;
        double est_d = 0.0, est_m = 0.0;
        std::size_t have_d = 0, have_m = 0;
        for (std::size_t r = 0; r != dataset_samples.size(); ++r) {
            const auto ed = estimate_from_sample(dataset_samples[r], BoundQuery(ast, dataset_samples[r].schema()),
                                                 population_n);
            const auto em =
                estimate_from_sample(model_samples[r], BoundQuery(ast, model_samples[r].schema()), population_n);
            const auto gd = group_relative_error(truth, ed);
            const auto gm = group_relative_error(truth, em);
            row.relerr_dataset += *gd.value;
            row.relerr_model += *gm.value;
            const double r_groups = static_cast<double>(gd.true_groups);
            row.missing_dataset += static_cast<double>(gd.true_groups - gd.estimated) / r_groups;
            row.missing_model += static_cast<double>(gm.true_groups - gm.estimated) / r_groups;
            if (!grouped) {
                if (!ed.groups.empty()) {
                    est_d += ed.groups.front().value;
                    ++have_d;
                }
                if (!em.groups.empty()) {
                    est_m += em.groups.front().value;
                    ++have_m;
                }
            }
        }
        row.relerr_dataset /= reps;
        row.relerr_model /= reps;
        row.missing_dataset /= reps;
        row.missing_model /= reps;
        row.estimate_dataset = have_d ? est_d / static_cast<double>(have_d) : nan;
        row.estimate_model = have_m ? est_m / static_cast<double>(have_m) : nan;
        row.red = std::abs(row.relerr_model - row.relerr_dataset);
        reds.push_back(row.red);
        rel_d.push_back(row.relerr_dataset);
        rel_m.push_back(row.relerr_model);
        report.rows.push_back(std::move(row));
    }
    report.mean_relerr_dataset = average_relative_error(rel_d);
    report.mean_relerr_model = average_relative_error(rel_m);
    report.median_red = median(reds);
    return report;
}

void write_error_csv(const ErrorReport &report, std::ostream &out)
{
    out << "query_id,truth,estimate_dataset,estimate_model,relerr_dataset,relerr_model,red\n";
    for (const auto &r : report.rows)
        out << r.query_id << ',' << format_double(r.truth) << ',' << format_double(r.estimate_dataset) << ','
            << format_double(r.estimate_model) << ',' << format_double(r.relerr_dataset) << ','
            << format_double(r.relerr_model) << ',' << format_double(r.red) << '\n';
}

/*----------------------------------------------------------------------------------------------------------------------
 * Workloads
 *--------------------------------------------------------------------------------------------------------------------*/

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m, std::uint64_t seed)
{
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<std::size_t> out;
    Rng rng(seed);
    std::sample(all.begin(), all.end(), std::back_inserter(out), std::min(n, m), rng);
    return out;
}

namespace {

bool numeric_valued(const AttributeSchema &attr)
{
    for (Code c = 0; c != attr.domain_size(); ++c)
        if (!std::isfinite(attr.representative(c)))
            return false;
    return true;
}

bool bare_word(const std::string &s)
{
    if (s.empty() || !ident_start(s[0]) || is_keyword(s))
        return false;
    return std::all_of(s.begin(), s.end(), ident_char);
}

} // namespace

Workload generate_workload(const Relation &relation, const WorkloadConfig &cfg)
{
    if (cfg.count == 0)
        throw DataError("workload size must be at least 1");
    if (cfg.strata.empty())
        throw DataError("workload needs at least one selectivity stratum");
    const auto &schema = relation.schema();
    const auto m = schema.size();
    if (m == 0)
        throw DataError("workload generation needs at least one attribute");

    std::vector<std::size_t> measures, groupable;
    std::vector<bool> numeric(m);
    for (std::size_t a = 0; a != m; ++a) {
        numeric[a] = numeric_valued(schema[a]);
        if (numeric[a])
            measures.push_back(a);
        if (schema[a].domain_size() <= 32)
            groupable.push_back(a);
    }

    // Quotas per (stratum, predicate count) cell keep the predicate-count histogram uniform.
    const auto ns = cfg.strata.size();
    std::vector<std::array<std::size_t, 3>> quota(ns), filled(ns, {0, 0, 0});
    for (std::size_t i = 0; i != cfg.count; ++i)
        ++quota[(i / 3) % ns][i % 3];

    Workload w;
    w.underfilled.assign(ns, false);
    Rng rng(cfg.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t max_attempts = 10 * cfg.count;
    for (std::size_t attempt = 0; attempt != max_attempts && w.queries.size() < cfg.count; ++attempt) {
        const std::size_t p = 1 + attempt % 3;
        bool open = false;
        for (std::size_t s = 0; s != ns; ++s)
            open = open || filled[s][p - 1] < quota[s][p - 1];
        if (!open)
            continue;

        QueryAst q;
        q.table = cfg.table;
        const auto agg = std::uniform_int_distribution<int>(0, 2)(rng);
        q.aggregate = measures.empty() ? AggregateKind::Count : static_cast<AggregateKind>(agg);
        std::size_t measure = m;
        if (q.aggregate != AggregateKind::Count) {
            measure = measures[std::uniform_int_distribution<std::size_t>(0, measures.size() - 1)(rng)];
            q.measure = schema[measure].name;
        }
        if (cfg.group_by && unif(rng) < 0.25) {
            std::vector<std::size_t> choices;
            for (auto g : groupable)
                if (g != measure)
                    choices.push_back(g);
            if (!choices.empty()) {
                const auto g = choices[std::uniform_int_distribution<std::size_t>(0, choices.size() - 1)(rng)];
                q.select_attributes.push_back(schema[g].name);
                q.group_by.push_back(schema[g].name);
            }
        }

        std::vector<std::size_t> attrs(m);
        std::iota(attrs.begin(), attrs.end(), std::size_t{0});
        std::shuffle(attrs.begin(), attrs.end(), rng);
        std::vector<Expr> preds;
        for (std::size_t i = 0; i != p; ++i) {
            const auto a = attrs[i % m];
            const auto &attr = schema[a];
            Expr e;
            e.attribute = attr.name;
            const auto code = static_cast<Code>(std::uniform_int_distribution<std::size_t>(0, attr.domain_size() - 1)(rng));
            if (numeric[a]) {
                static constexpr CompareOp ops[] = {CompareOp::Eq, CompareOp::Lt, CompareOp::Gt, CompareOp::Le,
                                                    CompareOp::Ge};
                e.op = ops[std::uniform_int_distribution<int>(0, 4)(rng)];
                e.literal = {format_double(attr.representative(code)), false};
            } else {
                e.op = unif(rng) < 0.7 ? CompareOp::Eq : CompareOp::Ne;
                const auto &text = attr.dictionary[code];
                e.literal = {text, !bare_word(text)};
            }
            preds.push_back(std::move(e));
        }
        if (preds.size() == 1) {
            q.filter = std::move(preds.front());
        } else {
            Expr combined;
            combined.kind = unif(rng) < 0.2 ? Expr::Kind::Or : Expr::Kind::And;
            combined.children = std::move(preds);
            q.filter = std::move(combined);
        }

        const auto text = to_string(q);
        const BoundQuery bound(q, schema);
        const double sel = selectivity(relation, bound);
        for (std::size_t s = 0; s != ns; ++s) {
            const auto [lo, hi] = cfg.strata[s];
            if (sel >= lo && sel <= hi && filled[s][p - 1] < quota[s][p - 1]) {
                ++filled[s][p - 1];
                w.queries.push_back(text);
                w.stratum.push_back(s);
                w.selectivity.push_back(sel);
                w.predicate_count.push_back(p);
                break;
            }
        }
    }
    for (std::size_t s = 0; s != ns; ++s)
        for (std::size_t p = 0; p != 3; ++p)
            if (filled[s][p] < quota[s][p])
                w.underfilled[s] = true;
    return w;
}

} // namespace gaqp
