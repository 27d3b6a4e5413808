// Policy editor: edit / validate / apply cycle for the firewall rule document
// and the threat policy. Validation happens server-side; a rejected document
// applies nothing and the line-numbered issues are handed back for display.

import { ApiClient, ApiError, RuleValidationIssue } from "./api.js";

export interface ApplyResult {
  applied: boolean;
  rules?: number;
  issues: RuleValidationIssue[];
  error?: string;
}

export class PolicyEditor {
  private lastAppliedFirewall: string | null = null;

  constructor(private readonly client: ApiClient) {}

  async loadFirewall(): Promise<string> {
    const text = await this.client.getFirewallPolicy();
    if (this.lastAppliedFirewall === null) {
      this.lastAppliedFirewall = text;
    }
    return text;
  }

  /** The last document the server accepted (as seen by this editor). */
  lastApplied(): string | null {
    return this.lastAppliedFirewall;
  }

  async applyFirewall(document: string): Promise<ApplyResult> {
    try {
      const outcome = await this.client.putFirewallPolicy(document);
      this.lastAppliedFirewall = document;
      return { applied: true, rules: outcome.rules, issues: [] };
    } catch (err) {
      if (err instanceof ApiError && err.status === 400) {
        const detail = err.detail as { errors?: RuleValidationIssue[] };
        return { applied: false, issues: detail?.errors ?? [], error: err.message };
      }
      throw err;
    }
  }

  async applyThreat(policy: unknown): Promise<ApplyResult> {
    try {
      await this.client.putThreatPolicy(policy);
      return { applied: true, issues: [] };
    } catch (err) {
      if (err instanceof ApiError && err.status === 400) {
        return { applied: false, issues: [], error: err.message };
      }
      throw err;
    }
  }
}
