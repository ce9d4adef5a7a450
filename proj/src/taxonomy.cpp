#include "smsi/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include <json.hpp>

#include "smsi/errors.hpp"

namespace smsi {

namespace {

bool is_lower_code(const std::string& s) {
    if (s.empty() || !std::islower(static_cast<unsigned char>(s.front()))) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return std::islower(c) || std::isdigit(c);
    });
}

bool is_upper_code(const std::string& s) {
    if (s.empty() || !std::isupper(static_cast<unsigned char>(s.front()))) return false;
    return std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return std::isupper(c) || std::isdigit(c);
    });
}

}  // namespace

ChainLabel parse_chain_code(const std::string& code) {
    std::size_t pos = 0;
    while (pos < code.size() && !std::isupper(static_cast<unsigned char>(code[pos]))) ++pos;
    if (pos == 0 || pos == code.size()) {
        throw BadTaxonomy("chain code '" + code +
                          "' must be a lower-case secondary followed by an upper-case primary");
    }
    ChainLabel chain{code.substr(0, pos), code.substr(pos)};
    if (!is_lower_code(chain.secondary) || !is_upper_code(chain.primary)) {
        throw BadTaxonomy("chain code '" + code + "' has malformed label casing");
    }
    return chain;
}

void Taxonomy::validate() const {
    if (primaries.empty()) throw BadTaxonomy("taxonomy has no primary labels");
    if (secondaries.empty()) throw BadTaxonomy("taxonomy has no secondary labels");
    if (chains.empty()) throw BadTaxonomy("taxonomy has no valid chains");

    std::set<std::string> primary_set;
    for (const std::string& p : primaries) {
        if (!is_upper_code(p)) throw BadTaxonomy("primary label '" + p + "' must be upper-case");
        if (!primary_set.insert(p).second) throw BadTaxonomy("duplicate primary label '" + p + "'");
    }
    std::set<std::string> secondary_set;
    for (const std::string& s : secondaries) {
        if (!is_lower_code(s)) throw BadTaxonomy("secondary label '" + s + "' must be lower-case");
        if (!secondary_set.insert(s).second) {
            throw BadTaxonomy("duplicate secondary label '" + s + "'");
        }
    }

    std::set<std::string> chain_set;
    std::set<std::string> reached;
    for (const std::string& code : chains) {
        const ChainLabel chain = parse_chain_code(code);
        if (!secondary_set.count(chain.secondary)) {
            throw BadTaxonomy("chain '" + code + "' uses unknown secondary '" + chain.secondary +
                              "'");
        }
        if (!primary_set.count(chain.primary)) {
            throw BadTaxonomy("chain '" + code + "' uses unknown primary '" + chain.primary + "'");
        }
        if (!chain_set.insert(code).second) throw BadTaxonomy("duplicate chain '" + code + "'");
        reached.insert(chain.primary);
    }
    for (const std::string& p : primaries) {
        if (!reached.count(p)) {
            throw BadTaxonomy("primary '" + p + "' appears in no valid chain");
        }
    }
}

bool Taxonomy::has_primary(const std::string& primary) const {
    return std::find(primaries.begin(), primaries.end(), primary) != primaries.end();
}

bool Taxonomy::is_valid_chain(const ChainLabel& chain) const {
    return std::find(chains.begin(), chains.end(), chain.code()) != chains.end();
}

int Taxonomy::primary_index(const std::string& primary) const {
    const auto it = std::find(primaries.begin(), primaries.end(), primary);
    if (it == primaries.end()) {
        throw UnknownPrimary("primary label '" + primary + "' is not in the taxonomy");
    }
    return static_cast<int>(it - primaries.begin());
}

std::vector<std::string> Taxonomy::secondaries_for(const std::string& primary) const {
    if (!has_primary(primary)) {
        throw UnknownPrimary("primary label '" + primary + "' is not in the taxonomy");
    }
    std::vector<std::string> out;
    for (const std::string& s : secondaries) {
        if (std::find(chains.begin(), chains.end(), s + primary) != chains.end()) {
            out.push_back(s);
        }
    }
    return out;
}

std::vector<std::string> Taxonomy::heads() const {
    std::vector<std::string> out;
    for (const std::string& p : primaries) {
        if (secondaries_for(p).size() >= 2) out.push_back(p);
    }
    return out;
}

std::string Taxonomy::to_json() const {
    nlohmann::json j;
    j["primaries"] = primaries;
    j["secondaries"] = secondaries;
    j["chains"] = chains;
    return j.dump(2);
}

Taxonomy Taxonomy::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw BadTaxonomy(std::string("taxonomy JSON does not parse: ") + e.what());
    }
    Taxonomy t;
    try {
        j.at("primaries").get_to(t.primaries);
        j.at("secondaries").get_to(t.secondaries);
        j.at("chains").get_to(t.chains);
    } catch (const nlohmann::json::exception& e) {
        throw BadTaxonomy(std::string("taxonomy JSON has a bad shape: ") + e.what());
    }
    t.validate();
    return t;
}

Taxonomy Taxonomy::paper() {
    Taxonomy t;
    t.primaries = {"NAT", "GOG", "FBH", "FBL", "WA"};
    t.secondaries = {"nat", "gog", "fbh", "fbl", "wa"};
    t.chains = {"natNAT", "natGOG", "fbhGOG", "fblGOG", "waGOG", "natFBH",
                "gogFBH", "fblFBH", "waFBH", "natFBL", "natWA"};
    return t;
}

Taxonomy Taxonomy::desk() {
    Taxonomy t;
    t.primaries = {"NAT", "A", "B", "C"};
    t.secondaries = {"nat", "a", "b"};
    t.chains = {"natNAT", "natA", "natB", "natC", "aC", "bC"};
    return t;
}

}  // namespace smsi
