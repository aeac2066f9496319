#include "dgc/messages.hpp"

#include <sstream>

namespace dgc {

namespace {

const char* kind_of(const MsgInsert&) { return "INSERT"; }
const char* kind_of(const MsgDelete&) { return "DELETE"; }
const char* kind_of(const MsgRefTransfer&) { return "REF_TRANSFER"; }
const char* kind_of(const MsgInvoke&) { return "INVOKE"; }
const char* kind_of(const MsgMarkGray&) { return "MARK_GRAY"; }
const char* kind_of(const MsgGrayAck&) { return "GRAY_ACK"; }
const char* kind_of(const MsgMarkWhite&) { return "MARK_WHITE"; }
const char* kind_of(const MsgReparentReq&) { return "REPARENT_REQ"; }
const char* kind_of(const MsgReparentAck&) { return "REPARENT_ACK"; }
const char* kind_of(const MsgEncounter&) { return "ENCOUNTER"; }
const char* kind_of(const MsgEncounterAck&) { return "EC_ACK"; }
const char* kind_of(const MsgMergeReq&) { return "MR"; }
const char* kind_of(const MsgMergeReply&) { return "MR_ACK"; }
const char* kind_of(const MsgAcceptReq&) { return "AR"; }
const char* kind_of(const MsgAcceptAck&) { return "AR_ACK"; }
const char* kind_of(const MsgJoinReq&) { return "JR"; }
const char* kind_of(const MsgJoin&) { return "JN"; }
const char* kind_of(const MsgAccept&) { return "AC"; }
const char* kind_of(const MsgGroupInstall&) { return "GI"; }
const char* kind_of(const MsgGroupInstallAck&) { return "GI_ACK"; }
const char* kind_of(const MsgCommitReq&) { return "CR"; }
const char* kind_of(const MsgCommitReqAck&) { return "CR_ACK"; }
const char* kind_of(const MsgCommit&) { return "CM"; }
const char* kind_of(const MsgCommitAck&) { return "CM_ACK"; }
const char* kind_of(const MsgMergeComplete&) { return "MC"; }
const char* kind_of(const MsgMergeInquiry&) { return "MI"; }
const char* kind_of(const MsgMergeInquiryAck&) { return "MI_ACK"; }
const char* kind_of(const MsgMergeAbort&) { return "MERGE_ABORT"; }
const char* kind_of(const MsgFaultSet&) { return "FAULT_SET"; }
const char* kind_of(const MsgFaultConfirm&) { return "FAULT_CONFIRM"; }
const char* kind_of(const MsgToken&) { return "TOKEN"; }
const char* kind_of(const MsgDoneBcast&) { return "DONE_BCAST"; }
const char* kind_of(const MsgReMarkGray&) { return "RG"; }
const char* kind_of(const MsgReMarkGrayReply&) { return "RG_REPLY"; }
const char* kind_of(const MsgMarkBlack&) { return "MARK_BLACK"; }
const char* kind_of(const MsgBlackReply&) { return "BLACK_REPLY"; }
const char* kind_of(const MsgNeighborQuery&) { return "NEIGHBOR_QUERY"; }
const char* kind_of(const MsgNeighborReply&) { return "NEIGHBOR_REPLY"; }
const char* kind_of(const MsgLivenessForward&) { return "LIVENESS_FORWARD"; }
const char* kind_of(const MsgExchangeAck&) { return "EXCH_ACK"; }
const char* kind_of(const MsgReMarkBlack&) { return "RE_MARK_BLACK"; }
const char* kind_of(const MsgReMarkBlackReply&) { return "RMB_REPLY"; }
const char* kind_of(const MsgSweep&) { return "SWEEP"; }

template <typename... Ts>
std::vector<std::string> names_of(const std::variant<Ts...>*) {
    return {kind_of(Ts{})...};
}

std::string trace_pair(const TraceId& from, const TraceId& to) {
    return "from=" + to_string(from) + " to=" + to_string(to);
}

struct Summarizer {
    std::string operator()(const MsgInsert& m) const {
        return "target=" + to_string(m.target) + " member=M" + std::to_string(m.member) +
               " ts=" + to_string(m.ts);
    }
    std::string operator()(const MsgDelete& m) const {
        return "target=" + to_string(m.target) + " member=M" + std::to_string(m.member) +
               " ts=" + to_string(m.ts);
    }
    std::string operator()(const MsgRefTransfer& m) const {
        return "target=" + to_string(m.target) +
               (valid(m.holder) ? " holder=" + to_string(m.holder) : "");
    }
    std::string operator()(const MsgInvoke& m) const {
        return "target=" + to_string(m.target) + " dur=" + std::to_string(m.duration);
    }
    std::string operator()(const MsgMarkGray& m) const {
        return to_string(m.trace) + " target=" + to_string(m.target) +
               " sender=" + to_string(m.sender_obj);
    }
    std::string operator()(const MsgGrayAck& m) const {
        return to_string(m.trace) + " " + to_string(m.from_obj) + "->" + to_string(m.to_obj);
    }
    std::string operator()(const MsgMarkWhite& m) const {
        return to_string(m.trace) + " target=" + to_string(m.target) +
               " sender=" + to_string(m.sender_obj);
    }
    std::string operator()(const MsgReparentReq& m) const {
        return to_string(m.trace) + " requester=" + to_string(m.requester);
    }
    std::string operator()(const MsgReparentAck& m) const {
        return to_string(m.trace) + " requester=" + to_string(m.requester);
    }
    std::string operator()(const MsgEncounter& m) const {
        return "req=" + to_string(m.requesting) + " owner=" + to_string(m.owner) +
               " at=" + to_string(m.at_object);
    }
    std::string operator()(const MsgEncounterAck& m) const {
        return "req=" + to_string(m.requesting) + " at=" + to_string(m.at_object);
    }
    std::string operator()(const MsgMergeReq& m) const { return trace_pair(m.from, m.to); }
    std::string operator()(const MsgMergeReply& m) const {
        return trace_pair(m.from, m.to) + (m.done ? " done" : " leader=" + to_string(m.leader));
    }
    std::string operator()(const MsgAcceptReq& m) const {
        return trace_pair(m.from, m.to) + " req_leader=" + to_string(m.requester_leader);
    }
    std::string operator()(const MsgAcceptAck& m) const {
        return trace_pair(m.from, m.to) + " req_leader=" + to_string(m.requester_leader);
    }
    std::string operator()(const MsgJoinReq& m) const {
        return trace_pair(m.from, m.to) + " target=" + to_string(m.target_leader);
    }
    std::string operator()(const MsgJoin& m) const {
        return trace_pair(m.from, m.to) + " n=" + std::to_string(m.group.size());
    }
    std::string operator()(const MsgAccept& m) const {
        return trace_pair(m.from, m.to) + " n=" + std::to_string(m.group.size());
    }
    std::string operator()(const MsgGroupInstall& m) const {
        return trace_pair(m.from, m.to) + " n=" + std::to_string(m.merge_list.size());
    }
    std::string operator()(const MsgGroupInstallAck& m) const { return trace_pair(m.from, m.to); }
    std::string operator()(const MsgCommitReq& m) const { return trace_pair(m.from, m.to); }
    std::string operator()(const MsgCommitReqAck& m) const { return trace_pair(m.from, m.to); }
    std::string operator()(const MsgCommit& m) const { return trace_pair(m.from, m.to); }
    std::string operator()(const MsgCommitAck& m) const { return trace_pair(m.from, m.to); }
    std::string operator()(const MsgMergeComplete& m) const { return trace_pair(m.from, m.to); }
    std::string operator()(const MsgMergeInquiry& m) const { return trace_pair(m.from, m.to); }
    std::string operator()(const MsgMergeInquiryAck& m) const {
        return trace_pair(m.from, m.to) + (m.merging ? " merging" : " canceled");
    }
    std::string operator()(const MsgMergeAbort& m) const { return trace_pair(m.from, m.to); }
    std::string operator()(const MsgFaultSet& m) const {
        return trace_pair(m.from, m.to) + " n=" + std::to_string(m.faults.size()) +
               (m.has_token ? " token" : "");
    }
    std::string operator()(const MsgFaultConfirm& m) const {
        return trace_pair(m.from, m.to) + " n=" + std::to_string(m.faults.size());
    }
    std::string operator()(const MsgToken& m) const {
        return trace_pair(m.from, m.to) + " phase=" + std::to_string(m.phase) +
               " done=" + std::to_string(m.token.done.size());
    }
    std::string operator()(const MsgDoneBcast& m) const {
        return trace_pair(m.from, m.to) + " phase=" + std::to_string(m.phase) +
               " done=" + std::to_string(m.done.size());
    }
    std::string operator()(const MsgReMarkGray& m) const {
        return to_string(m.trace) + " failed=" + to_string(m.failed) +
               " target=" + to_string(m.target);
    }
    std::string operator()(const MsgReMarkGrayReply& m) const {
        return to_string(m.trace) + " at=" + to_string(m.at_object) +
               " belongs=" + to_string(m.belongs_to);
    }
    std::string operator()(const MsgMarkBlack& m) const {
        return to_string(m.trace) + " exit=" + to_string(m.target.target) +
               " req=" + to_string(m.requester);
    }
    std::string operator()(const MsgBlackReply& m) const {
        return to_string(m.trace) + " exit=" + to_string(m.from_exit.target) +
               (m.live ? " live" : " garbage");
    }
    std::string operator()(const MsgNeighborQuery& m) const {
        return trace_pair(m.from, m.to) + " n=" + std::to_string(m.objects.size());
    }
    std::string operator()(const MsgNeighborReply& m) const {
        return trace_pair(m.from, m.to) + " n=" + std::to_string(m.outside_reachable.size());
    }
    std::string operator()(const MsgLivenessForward& m) const {
        return trace_pair(m.from, m.to) + " n=" + std::to_string(m.outside_reachable.size());
    }
    std::string operator()(const MsgExchangeAck& m) const { return trace_pair(m.from, m.to); }
    std::string operator()(const MsgReMarkBlack& m) const {
        return to_string(m.trace) + " failed=" + to_string(m.failed) +
               " target=" + to_string(m.target);
    }
    std::string operator()(const MsgReMarkBlackReply& m) const {
        return to_string(m.trace) + " at=" + to_string(m.at_object) +
               " attached=" + to_string(m.attached_to);
    }
    std::string operator()(const MsgSweep& m) const {
        return to_string(m.trace) + " target=" + to_string(m.target);
    }
};

}  // namespace

const char* kind_name(const Payload& p) {
    return std::visit([](const auto& m) { return kind_of(m); }, p);
}

std::vector<std::string> all_kind_names() {
    return names_of(static_cast<const Payload*>(nullptr));
}

std::string summarize(const Payload& p) { return std::visit(Summarizer{}, p); }

}  // namespace dgc
