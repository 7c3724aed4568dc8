// Reference implementation of the external scorer protocol: reads one JSON
// request per line ({state_text, action_text, icl, kind}) and answers
// {"value": <real>}. Useful for wiring tests and as a template for real
// scorer backends.
#include <chrono>
#include <iostream>
#include <string>
#include <thread>

#include <json.hpp>

using nlohmann::json;

int main(int argc, char** argv) {
    std::string prefer;
    double intuition_value = 1.0;
    double self_eval_value = 0.5;
    int sleep_ms = 0;
    for (int i = 1; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--prefer" && i + 1 < argc) prefer = argv[++i];
        else if (arg == "--intuition" && i + 1 < argc) intuition_value = std::stod(argv[++i]);
        else if (arg == "--self-eval" && i + 1 < argc) self_eval_value = std::stod(argv[++i]);
        else if (arg == "--sleep-ms" && i + 1 < argc) sleep_ms = std::stoi(argv[++i]);
    }
    std::string line;
    while (std::getline(std::cin, line)) {
        if (line.empty()) continue;
        if (sleep_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
        json res;
        try {
            json req = json::parse(line);
            auto kind = req.value("kind", "intuition");
            double value = (kind == "self_eval") ? self_eval_value : intuition_value;
            if (!prefer.empty()) {
                auto action = req.value("action_text", "");
                value = action.find(prefer) != std::string::npos ? 1.0 : 0.0;
            }
            res = json{{"value", value}};
        } catch (const std::exception& e) {
            res = json{{"value", 0.0}, {"error", e.what()}};
        }
        std::cout << res.dump() << "\n" << std::flush;
    }
    return 0;
}
