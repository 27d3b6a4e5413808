// Captive portal flow for quarantined endpoints. The portal learns its
// session from the quarantine redirect (session id in the URL), shows either
// the registration or the remediation phase, and relies entirely on the
// server for state: registering posts /portal/register and then re-requests
// access; remediating posts /portal/remediate per pending item.

import {
  AccessRequestBody,
  ApiClient,
  GuestRegistrationBody,
  RemediationItemDTO,
  SessionDTO,
} from "./api.js";

export type PortalPhase = "register" | "remediate" | "done";

export interface PortalState {
  phase: PortalPhase;
  sessionId: string;
  items: RemediationItemDTO[];
  message: string;
}

function phaseOf(session: SessionDTO): PortalPhase {
  if (session.state !== "Quarantined") {
    return "done";
  }
  return session.portal === "registration" ? "register" : "remediate";
}

export class CaptivePortal {
  constructor(
    private readonly client: ApiClient,
    readonly sessionId: string,
  ) {}

  async load(): Promise<PortalState> {
    const session = await this.client.getSession(this.sessionId);
    const phase = phaseOf(session);
    return {
      phase,
      sessionId: this.sessionId,
      // The server derives this list from the decision engine's current
      // posture verdict; the portal never computes it locally.
      items: phase === "remediate" ? session.remediation : [],
      message:
        phase === "done"
          ? `session is ${session.state}`
          : `quarantined: ${session.last_reason}`,
    };
  }

  private accessBodyFor(
    session: SessionDTO,
    cred: { method: string; principal: string; secret?: string } | null,
  ): AccessRequestBody {
    return {
      cred: cred ?? { method: "mac-only", principal: session.device.mac },
      device: {
        mac: session.device.mac,
        device_class: session.device.device_class,
      },
      location: session.location,
      posture: null,
      requested_at: Date.now(),
    };
  }

  /** Registration phase: create the guest account, then re-request access
   * with the issued token. Returns the refreshed portal state. */
  async register(
    reg: GuestRegistrationBody,
    postureChecks: Record<string, boolean | number> | null = null,
  ): Promise<PortalState> {
    const session = await this.client.getSession(this.sessionId);
    const issued = await this.client.registerGuest(reg);
    const body = this.accessBodyFor(session, {
      method: "token",
      principal: issued.user_id,
      secret: issued.token,
    });
    if (postureChecks !== null) {
      body.posture = {
        device: body.device,
        checks: postureChecks,
        collected_at: Date.now(),
      };
    }
    const response = await this.client.requestAccess(body);
    const granted = response.decision.verdict === "Grant";
    return {
      phase: granted ? "done" : "remediate",
      sessionId: response.session_id ?? this.sessionId,
      items: response.decision.remediation,
      message: granted
        ? `welcome, ${issued.user_id}: session is Active`
        : `registered, but still quarantined (${response.decision.reason ?? ""})`,
    };
  }

  /** Remediation phase: apply the pending fixes one by one; the server
   * re-evaluates after each. Abandoning mid-flow leaves the session
   * quarantined. */
  async remediate(items: RemediationItemDTO[]): Promise<PortalState> {
    let lastApplied = "";
    for (const item of items) {
      const outcome = await this.client.remediate(this.sessionId, item.check_id);
      lastApplied = item.check_id;
      if (outcome.session.state === "Active") {
        return {
          phase: "done",
          sessionId: this.sessionId,
          items: [],
          message: `remediated ${lastApplied}: session is Active`,
        };
      }
    }
    return this.load();
  }
}
