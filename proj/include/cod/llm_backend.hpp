/**
 * @file llm_backend.hpp
 * @brief Belief backend that delegates reasoning and confidence assessment
 *        to an external language-model service.
 *
 * Wire contract: POST a JSON body {"template_id", "rendered_prompt"} to the
 * configured endpoint and expect {"analysis": string, "distribution":
 * {disease name: number}} back. Distributions are keyed by display name or
 * id and repaired with validate_distribution.
 */

#pragma once

#include <functional>
#include <map>
#include <string>

#include "cod/belief.hpp"

namespace cod::belief {

/// Sends one request body and returns the response body. Throws
/// BackendError on transport failure or a non-2xx status.
using Transport = std::function<std::string(const std::string& request_body)>;

/// HTTP POST transport built on cpp-httplib.
Transport http_transport(const LlmSettings& settings);

/// Editable prompt templates with `{placeholder}` slots. Files named
/// `<template_id>.txt` in the prompt directory override the built-ins.
class PromptTemplates {
public:
    PromptTemplates();
    explicit PromptTemplates(const std::filesystem::path& dir);

    const std::string& get(const std::string& id) const;
    std::string render(const std::string& id, const std::map<std::string, std::string>& vars) const;

    static const std::map<std::string, std::string>& builtin();

private:
    std::map<std::string, std::string> templates_;
};

struct LlmReply {
    std::string analysis;
    std::map<std::string, double> distribution;
};

/// Parses a reply body. Accepts the object directly or embedded in
/// surrounding text. Throws BackendError when unusable.
LlmReply parse_llm_reply(const std::string& body);

class LlmBackend final : public BeliefBackend {
public:
    LlmBackend(LlmSettings settings, Transport transport);

    Assessment assess(const AssessRequest& request) override;
    std::optional<Assessment> rethink(const AssessRequest& request, const Assessment& rejected) override;
    BackendKind kind() const noexcept override { return BackendKind::llm; }

    std::string render_reasoning_prompt(const AssessRequest& request) const;

private:
    std::string call(const std::string& template_id, const std::string& prompt);
    Assessment to_assessment(const LlmReply& reply, const AssessRequest& request) const;
    Assessment ask(const AssessRequest& request, const std::string& template_id, const std::string& prompt);

    LlmSettings settings_;
    Transport transport_;
    PromptTemplates templates_;
};

} // namespace cod::belief
