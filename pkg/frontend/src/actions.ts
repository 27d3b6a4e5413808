// Admin actions legal per session state. This table mirrors the server's
// lifecycle state machine; the contract test compares it against the
// available_actions the server reports for live sessions in every state.

export type SessionState =
  | "Pending"
  | "Active"
  | "Quarantined"
  | "Disabled"
  | "Terminated";

export type AdminAction = "terminate" | "disable" | "reenable";

export const LEGAL_ACTIONS: Record<SessionState, readonly AdminAction[]> = {
  Pending: ["terminate"],
  Active: ["terminate", "disable"],
  Quarantined: ["terminate", "disable"],
  Disabled: ["reenable", "terminate"],
  Terminated: [],
};

export function availableActions(state: string): readonly AdminAction[] {
  return LEGAL_ACTIONS[state as SessionState] ?? [];
}
