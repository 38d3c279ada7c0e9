#include "blockflow/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <sstream>

#include "blockflow/autofocus.hpp"
#include "blockflow/codegen.hpp"
#include "blockflow/control.hpp"
#include "blockflow/errors.hpp"
#include "blockflow/executor.hpp"
#include "blockflow/net.hpp"
#include "blockflow/stdblocks.hpp"
#include "blockflow/util.hpp"

namespace blockflow::cli {

using graph::Diagram;
using graph::ParamMap;
using graph::ParamValue;

// ---------------------------------------------------------------------------
// Diagram file format
// ---------------------------------------------------------------------------

namespace {

bool validName(const std::string& s) {
    if (s.empty()) return false;
    if (!(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
    return true;
}

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> tokens;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) {
        if (tok[0] == '#') break;
        tokens.push_back(tok);
    }
    return tokens;
}

bool tryParseDouble(const std::string& s, double& out) {
    try {
        size_t pos = 0;
        out = std::stod(s, &pos);
        return pos == s.size();
    } catch (...) {
        return false;
    }
}

bool tryParseMatrix(const std::string& s, la::Matrix& out) {
    if (s.find(',') == std::string::npos && s.find(';') == std::string::npos) return false;
    std::vector<std::vector<double>> rows;
    std::stringstream rowStream(s);
    std::string rowText;
    while (std::getline(rowStream, rowText, ';')) {
        std::vector<double> row;
        std::stringstream cellStream(rowText);
        std::string cell;
        while (std::getline(cellStream, cell, ',')) {
            double v;
            if (!tryParseDouble(cell, v)) return false;
            row.push_back(v);
        }
        if (row.empty()) return false;
        rows.push_back(std::move(row));
    }
    if (rows.empty()) return false;
    size_t cols = rows[0].size();
    for (const auto& r : rows)
        if (r.size() != cols) return false;
    la::Matrix m(static_cast<int>(rows.size()), static_cast<int>(cols));
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < cols; ++c) m(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
    out = m;
    return true;
}

ParamValue parseParamValue(const std::string& text) {
    double d;
    if (tryParseDouble(text, d)) return d;
    la::Matrix m;
    if (tryParseMatrix(text, m)) return m;
    return text;
}

std::pair<std::string, ParamValue> parseKeyValue(const std::string& tok, int line) {
    size_t eq = tok.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ParseError("expected key=value, got '" + tok + "'", line);
    return {tok.substr(0, eq), parseParamValue(tok.substr(eq + 1))};
}

graph::SlotRef parseSlot(const Diagram& d, const std::string& text, bool wantOutput,
                         int line) {
    size_t dot = text.rfind('.');
    if (dot == std::string::npos)
        throw ParseError("expected <block>.<slot>, got '" + text + "'", line);
    std::string name = text.substr(0, dot);
    std::string slot = text.substr(dot + 1);
    auto id = d.findBlock(name);
    if (!id) throw ParseError("unknown block '" + name + "'", line);

    graph::PortKind kind;
    size_t digits;
    if (slot.rfind("out", 0) == 0) {
        kind = graph::PortKind::Output;
        digits = 3;
    } else if (slot.rfind("in", 0) == 0) {
        kind = graph::PortKind::Input;
        digits = 2;
    } else {
        throw ParseError("slot '" + slot + "' must look like in0 or out0", line);
    }
    int index;
    try {
        size_t used = 0;
        index = std::stoi(slot.substr(digits), &used);
        if (used != slot.size() - digits) throw std::invalid_argument(slot);
    } catch (...) {
        throw ParseError("slot '" + slot + "' must end with a slot index", line);
    }
    (void)wantOutput;
    return {*id, kind, index};
}

std::string paramValueText(const ParamValue& v) {
    if (const double* d = std::get_if<double>(&v)) return util::fmtDouble(*d);
    if (const std::string* s = std::get_if<std::string>(&v)) return *s;
    const la::Matrix& m = std::get<la::Matrix>(v);
    std::string out;
    for (int r = 0; r < m.rows(); ++r) {
        if (r) out += ';';
        for (int c = 0; c < m.cols(); ++c) {
            if (c) out += ',';
            out += util::fmtDouble(m(r, c));
        }
    }
    return out;
}

}  // namespace

Diagram parseDiagramFile(const std::string& text) {
    Diagram d;
    std::istringstream is(text);
    std::string line;
    int lineNo = 0;
    while (std::getline(is, line)) {
        ++lineNo;
        std::vector<std::string> tokens = tokenize(line);
        if (tokens.empty()) continue;
        const std::string& cmd = tokens[0];
        try {
            if (cmd == "block") {
                if (tokens.size() < 3)
                    throw ParseError("block requires a name and a kind", lineNo);
                if (!validName(tokens[1]))
                    throw ParseError("bad block name '" + tokens[1] + "'", lineNo);
                ParamMap params;
                for (size_t i = 3; i < tokens.size(); ++i)
                    params.insert(parseKeyValue(tokens[i], lineNo));
                d.add(tokens[2], tokens[1], params);
            } else if (cmd == "connect") {
                if (tokens.size() != 3)
                    throw ParseError("connect requires a source and a sink", lineNo);
                graph::SlotRef src = parseSlot(d, tokens[1], true, lineNo);
                graph::SlotRef dst = parseSlot(d, tokens[2], false, lineNo);
                d.connect(src, dst);
            } else if (cmd == "param") {
                if (tokens.size() < 3)
                    throw ParseError("param requires a block name and key=value", lineNo);
                auto id = d.findBlock(tokens[1]);
                if (!id) throw ParseError("unknown block '" + tokens[1] + "'", lineNo);
                ParamMap params;
                for (size_t i = 2; i < tokens.size(); ++i)
                    params.insert(parseKeyValue(tokens[i], lineNo));
                d.setParams(*id, params);
            } else {
                throw ParseError("unknown directive '" + cmd + "'", lineNo);
            }
        } catch (const ParseError&) {
            throw;
        } catch (const EngineError& e) {
            throw ParseError(e.what(), lineNo);
        }
    }
    return d;
}

std::string dumpDiagramFile(const Diagram& d) {
    std::ostringstream os;
    for (graph::BlockId id = 0; id < d.blockCount(); ++id) {
        os << "block " << d.blockName(id) << ' ' << d.blockKind(id);
        for (const auto& [key, value] : d.blockParams(id))
            os << ' ' << key << '=' << paramValueText(value);
        os << '\n';
    }
    for (const graph::SignalEdge& e : d.edges())
        os << "connect " << d.slotName(e.source) << ' ' << d.slotName(e.sink) << '\n';
    return os.str();
}

bool sameDiagram(const Diagram& a, const Diagram& b) {
    if (a.blockCount() != b.blockCount()) return false;
    for (graph::BlockId id = 0; id < a.blockCount(); ++id) {
        if (a.blockName(id) != b.blockName(id) || a.blockKind(id) != b.blockKind(id))
            return false;
        const ParamMap& pa = a.blockParams(id);
        const ParamMap& pb = b.blockParams(id);
        if (pa.size() != pb.size()) return false;
        for (auto ia = pa.begin(), ib = pb.begin(); ia != pa.end(); ++ia, ++ib) {
            if (ia->first != ib->first) return false;
            if (paramValueText(ia->second) != paramValueText(ib->second)) return false;
        }
    }
    if (a.edges().size() != b.edges().size()) return false;
    for (size_t i = 0; i < a.edges().size(); ++i) {
        if (!(a.edges()[i].source == b.edges()[i].source)) return false;
        if (!(a.edges()[i].sink == b.edges()[i].sink)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Subcommand helpers
// ---------------------------------------------------------------------------

namespace {

std::string readFile(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw EngineError("cannot open '" + path + "'");
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void writeFile(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw EngineError("cannot write '" + path + "'");
    f << content;
}

la::Matrix parseMatrixArg(const std::string& text) {
    la::Matrix m;
    if (tryParseMatrix(text, m)) return m;
    double d;
    if (tryParseDouble(text, d)) return la::Matrix(1, 1, {d});
    throw EngineError("cannot parse matrix '" + text + "'");
}

std::vector<double> parseCoeffList(const std::string& text) {
    la::Matrix m = parseMatrixArg(text);
    if (m.rows() != 1) throw EngineError("expected a single coefficient row");
    return m.data();
}

void printMatrix(std::ostream& out, const std::string& name, const la::Matrix& m) {
    out << name << " =\n" << m.toString();
}

std::string stemOf(const std::string& path) {
    size_t slash = path.find_last_of('/');
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    size_t dot = base.find_last_of('.');
    if (dot != std::string::npos && dot > 0) base = base.substr(0, dot);
    std::string cleaned;
    for (char c : base)
        cleaned += (std::isalnum(static_cast<unsigned char>(c)) || c == '_') ? c : '_';
    if (cleaned.empty() || std::isdigit(static_cast<unsigned char>(cleaned[0])))
        cleaned = "model_" + cleaned;
    return cleaned;
}

net::Bytes parseHexKey(const std::string& hex) {
    if (hex.empty() || hex.size() % 2 != 0) throw EngineError("key must be even-length hex");
    net::Bytes key;
    for (size_t i = 0; i < hex.size(); i += 2) {
        auto nibble = [&](char c) -> int {
            if (c >= '0' && c <= '9') return c - '0';
            if (c >= 'a' && c <= 'f') return c - 'a' + 10;
            if (c >= 'A' && c <= 'F') return c - 'A' + 10;
            throw EngineError("bad hex digit in key");
        };
        key.push_back(static_cast<uint8_t>((nibble(hex[i]) << 4) | nibble(hex[i + 1])));
    }
    return key;
}

std::pair<std::string, uint16_t> parseHostPort(const std::string& text) {
    size_t colon = text.rfind(':');
    if (colon == std::string::npos) throw EngineError("expected host:port");
    int port = std::stoi(text.substr(colon + 1));
    if (port < 0 || port > 65535) throw EngineError("port out of range");
    return {text.substr(0, colon), static_cast<uint16_t>(port)};
}

net::PayloadCodec defaultCodec() {
    net::PayloadCodec codec;
    codec.registerType(0, net::PayloadShape::empty());
    codec.registerType(1, net::PayloadShape::scalar());
    codec.registerType(2, net::PayloadShape::vector(3));
    codec.registerType(3, net::PayloadShape::matrix(2, 2));
    return codec;
}

int commandValidate(const std::string& file, std::ostream& out, std::ostream& err) {
    Diagram d = parseDiagramFile(readFile(file));
    graph::ValidationReport report = d.validate();
    if (report.ok()) {
        out << "OK: " << d.blockCount() << " block(s), " << d.edges().size()
            << " edge(s)\n";
        return 0;
    }
    err << report.toString();
    return 1;
}

int commandOrder(const std::string& file, std::ostream& out, std::ostream& err) {
    Diagram d = parseDiagramFile(readFile(file));
    graph::ValidationReport report = d.validate();
    if (!report.ok()) {
        err << report.toString();
        return 1;
    }
    out << d.debugDump();
    return 0;
}

int commandRun(const std::string& file, int cycles, const std::string& csvPath,
               std::ostream& out, std::ostream&) {
    Diagram d = parseDiagramFile(readFile(file));
    graph::Executor ex(d);

    std::vector<graph::SlotRef> terminals;
    for (graph::SlotRef s : ex.terminalOutputs())
        if (d.block(s.block).info().outputTypes[s.slot].isScalar()) terminals.push_back(s);

    std::ostringstream csv;
    csv << "cycle";
    for (graph::SlotRef s : terminals) csv << ',' << d.slotName(s);
    csv << '\n';
    for (int k = 0; k < cycles; ++k) {
        ex.runCycle();
        csv << k;
        for (graph::SlotRef s : terminals)
            csv << ',' << util::fmtDouble(ex.scalarOutput(s.block, s.slot));
        csv << '\n';
    }
    if (csvPath == "-")
        out << csv.str();
    else
        writeFile(csvPath, csv.str());
    return 0;
}

int commandCodegen(const std::string& file, const std::string& outDir, std::ostream& out,
                   std::ostream&) {
    Diagram d = parseDiagramFile(readFile(file));
    graph::ExecutionSchedule schedule = d.resolveExecutionOrder();
    codegen::FlatProgram program = codegen::lowerToFlatProgram(d, schedule);
    std::string name = stemOf(file);
    codegen::EmittedSource src = codegen::emitCSource(program, name);
    std::string cPath = outDir + "/" + name + ".c";
    std::string hPath = outDir + "/" + name + ".h";
    writeFile(cPath, src.source);
    writeFile(hPath, src.header);
    out << hPath << '\n' << cPath << '\n';
    return 0;
}

int commandDemoAutofocus(int cycles, const std::string& csvPath, uint64_t seed,
                         double trueFocus, double noise, std::ostream& out,
                         std::ostream&) {
    autofocus::FocusPlant plant;
    plant.scene = autofocus::makeDefaultScene();
    plant.trueFocus = trueFocus;
    plant.noiseAmplitude = noise;
    plant.seed(seed);
    autofocus::AutofocusConfig cfg;
    std::vector<autofocus::TraceRow> rows = autofocus::runClosedLoop(plant, cfg, cycles);
    std::string csv = autofocus::traceToCsv(rows);
    if (csvPath == "-")
        out << csv;
    else
        writeFile(csvPath, csv);
    out << "final motor position " << util::fmtDouble(plant.motorPosition)
        << " (true focus " << util::fmtDouble(plant.trueFocus) << ")\n";
    return 0;
}

int commandDemoPid(const std::string& csvPath, std::ostream& out, std::ostream&) {
    stdblocks::JointScenario scenario;
    stdblocks::JointComparison cmp = stdblocks::runJointTrackingComparison(scenario);
    std::ostringstream csv;
    csv << "cycle,plain_position,plain_control,aw_position,aw_control\n";
    for (int k = 0; k < scenario.cycles; ++k)
        csv << k << ',' << util::fmtDouble(cmp.plain.position[k]) << ','
            << util::fmtDouble(cmp.plain.control[k]) << ','
            << util::fmtDouble(cmp.antiWindup.position[k]) << ','
            << util::fmtDouble(cmp.antiWindup.control[k]) << '\n';
    if (csvPath == "-")
        out << csv.str();
    else if (!csvPath.empty())
        writeFile(csvPath, csv.str());
    out << "plain peak overshoot " << util::fmtDouble(cmp.plainPeak)
        << ", anti-windup peak overshoot " << util::fmtDouble(cmp.antiWindupPeak) << '\n';
    return 0;
}

int commandNetEcho(const std::string& listen, const std::string& keyHex, int maxFrames,
                   int idleMs, std::ostream& out, std::ostream&) {
    auto [host, port] = parseHostPort(listen);
    auto transport = net::makeUdpTransport(host, port, host, 0);
    auto signer = std::make_shared<net::HmacSha256Signer>(parseHexKey(keyHex));
    net::FrameEndpoint endpoint(std::move(transport), defaultCodec(), signer,
                                /*localId=*/0, /*filterByDestination=*/false);
    int served = 0;
    while (maxFrames <= 0 || served < maxFrames) {
        std::optional<net::Message> msg = endpoint.receive(idleMs);
        if (!msg) break;  // idle timeout
        endpoint.publish(msg->origin, msg->typeId, msg->value);
        ++served;
    }
    out << "echoed " << served << " frame(s), dropped " << endpoint.totalDrops() << '\n';
    return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

int runCommand(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"blockflow: a block-diagram control engine"};
    app.require_subcommand(1);

    std::string file, csvPath = "-", outDir = ".";
    int cycles = 1;
    uint64_t seed = 0;

    auto* validate = app.add_subcommand("validate", "check a diagram file");
    validate->add_option("file", file)->required();

    auto* order = app.add_subcommand("order", "print schedule and loop clusters");
    order->add_option("file", file)->required();

    auto* run = app.add_subcommand("run", "execute cycles and write a CSV trace");
    run->add_option("file", file)->required();
    run->add_option("--cycles", cycles)->default_val(1);
    run->add_option("--csv", csvPath)->default_val("-");
    run->add_option("--seed", seed)->default_val(0);

    auto* gen = app.add_subcommand("codegen", "emit C source for a diagram");
    gen->add_option("file", file)->required();
    gen->add_option("--out", outDir)->default_val(".");

    // synth
    auto* synth = app.add_subcommand("synth", "control synthesis routines");
    synth->require_subcommand(1);
    std::string aText, bText, cText = "", dText = "", qText, rText, numText, denText;
    std::string method = "zoh";
    double sampleT = 1.0;

    auto* sDlqr = synth->add_subcommand("dlqr", "discrete LQR gain");
    sDlqr->add_option("--a", aText)->required();
    sDlqr->add_option("--b", bText)->required();
    sDlqr->add_option("--q", qText)->required();
    sDlqr->add_option("--r", rText)->required();

    auto* sC2d = synth->add_subcommand("c2d", "discretize a continuous system");
    sC2d->add_option("--a", aText)->required();
    sC2d->add_option("--b", bText)->required();
    sC2d->add_option("--c", cText);
    sC2d->add_option("--d", dText);
    sC2d->add_option("--method", method)->check(CLI::IsMember({"zoh", "tustin"}));
    sC2d->add_option("--T", sampleT)->required();

    auto* sSs2tf = synth->add_subcommand("ss2tf", "state space to transfer function");
    sSs2tf->add_option("--a", aText)->required();
    sSs2tf->add_option("--b", bText)->required();
    sSs2tf->add_option("--c", cText)->required();
    sSs2tf->add_option("--d", dText);

    auto* sTf2ss = synth->add_subcommand("tf2ss", "transfer function to state space");
    sTf2ss->add_option("--num", numText)->required();
    sTf2ss->add_option("--den", denText)->required();

    // demos
    auto* demo = app.add_subcommand("demo", "closed-loop demos");
    demo->require_subcommand(1);
    double trueFocus = 0.45, noise = 0.05;
    auto* dAuto = demo->add_subcommand("autofocus", "thermographic autofocus demo");
    dAuto->add_option("--cycles", cycles)->default_val(800);
    dAuto->add_option("--csv", csvPath)->default_val("-");
    dAuto->add_option("--seed", seed)->default_val(0);
    dAuto->add_option("--true-focus", trueFocus)->default_val(0.45);
    dAuto->add_option("--noise", noise)->default_val(0.05);
    auto* dPid = demo->add_subcommand("pid", "anti-windup PID comparison");
    dPid->add_option("--csv", csvPath)->default_val("");

    // net-echo
    std::string listen = "127.0.0.1:47810", keyHex = "00";
    int maxFrames = 0, idleMs = 2000;
    auto* echo = app.add_subcommand("net-echo", "verify and echo signed frames over UDP");
    echo->add_option("--listen", listen)->default_val("127.0.0.1:47810");
    echo->add_option("--key", keyHex)->required();
    echo->add_option("--max-frames", maxFrames)->default_val(0);
    echo->add_option("--idle-ms", idleMs)->default_val(2000);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << e.what() << '\n';
        return 1;
    }

    try {
        if (validate->parsed()) return commandValidate(file, out, err);
        if (order->parsed()) return commandOrder(file, out, err);
        if (run->parsed()) return commandRun(file, cycles, csvPath, out, err);
        if (gen->parsed()) return commandCodegen(file, outDir, out, err);
        if (synth->parsed()) {
            if (sDlqr->parsed()) {
                control::DlqrResult res =
                    control::dlqr(parseMatrixArg(aText), parseMatrixArg(bText),
                                  parseMatrixArg(qText), parseMatrixArg(rText));
                printMatrix(out, "P", res.p);
                printMatrix(out, "K", res.k);
                return 0;
            }
            control::StateSpace sys;
            if (sC2d->parsed()) {
                sys.a = parseMatrixArg(aText);
                sys.b = parseMatrixArg(bText);
                int n = sys.a.rows();
                sys.c = cText.empty() ? la::Matrix(1, n) : parseMatrixArg(cText);
                sys.d = dText.empty() ? la::Matrix(1, sys.b.cols()) : parseMatrixArg(dText);
                control::StateSpace dsys = method == "zoh" ? control::c2dZOH(sys, sampleT)
                                                           : control::c2dTustin(sys, sampleT);
                printMatrix(out, "Ad", dsys.a);
                printMatrix(out, "Bd", dsys.b);
                printMatrix(out, "Cd", dsys.c);
                printMatrix(out, "Dd", dsys.d);
                return 0;
            }
            if (sSs2tf->parsed()) {
                sys.a = parseMatrixArg(aText);
                sys.b = parseMatrixArg(bText);
                sys.c = parseMatrixArg(cText);
                sys.d = dText.empty() ? la::Matrix(1, 1) : parseMatrixArg(dText);
                control::TransferFunction tf = control::ss2tf(sys);
                printMatrix(out, "num",
                            la::Matrix(1, static_cast<int>(tf.numerator.size()),
                                       tf.numerator));
                printMatrix(out, "den",
                            la::Matrix(1, static_cast<int>(tf.denominator.size()),
                                       tf.denominator));
                return 0;
            }
            if (sTf2ss->parsed()) {
                control::TransferFunction tf;
                tf.numerator = parseCoeffList(numText);
                tf.denominator = parseCoeffList(denText);
                control::StateSpace ss = control::tf2ss(tf);
                printMatrix(out, "A", ss.a);
                printMatrix(out, "B", ss.b);
                printMatrix(out, "C", ss.c);
                printMatrix(out, "D", ss.d);
                return 0;
            }
        }
        if (demo->parsed()) {
            if (dAuto->parsed())
                return commandDemoAutofocus(cycles, csvPath, seed, trueFocus, noise, out,
                                            err);
            if (dPid->parsed()) return commandDemoPid(csvPath, out, err);
        }
        if (echo->parsed()) return commandNetEcho(listen, keyHex, maxFrames, idleMs, out, err);
    } catch (const ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const InvalidDiagram& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const EngineError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    err << "no subcommand given\n";
    return 1;
}

}  // namespace blockflow::cli
