// Typed client for the policy-server HTTP API. The console performs no state
// computation of its own: every action here is a plain API call.

export interface UserDTO {
  user_id: string;
  display_name: string;
  roles: string[];
  kind: string;
}

export interface DeviceDTO {
  mac: string;
  device_class: string;
  managed: boolean;
}

export interface LocationDTO {
  zone: string;
  switch_id?: string;
  port_id?: string;
  vpn_gateway_id?: string;
}

export interface RemediationItemDTO {
  check_id: string;
  instruction: string;
  req_id: string;
}

export interface SessionDTO {
  session_id: string;
  user: UserDTO;
  device: DeviceDTO;
  location: LocationDTO;
  ip: string;
  state: string;
  role: string | null;
  vlan: number | null;
  portal: string | null;
  rate_limit_kbps: number | null;
  denied_applications: string[];
  last_reason: string;
  available_actions: string[];
  remediation: RemediationItemDTO[];
}

export interface DecisionDTO {
  verdict: "Grant" | "Quarantine" | "Deny";
  role: string | null;
  vlan_id: number | null;
  portal: string | null;
  reason: string | null;
  posture_status: string | null;
  remediation: RemediationItemDTO[];
}

export interface AccessResponse {
  decision: DecisionDTO;
  session_id: string | null;
  session: SessionDTO | null;
}

export interface AccessRequestBody {
  cred: { method: string; principal: string; secret?: string };
  device: { mac: string; device_class: string };
  location: LocationDTO;
  posture: {
    device: { mac: string; device_class: string };
    checks: Record<string, boolean | number>;
    collected_at: number;
  } | null;
  requested_at: number;
}

export interface GuestRegistrationBody {
  name: string;
  email: string;
  sponsor: string;
  expiry_ms: number;
}

export interface RuleValidationIssue {
  line: number;
  field: string;
  message: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
  ) {
    super(typeof detail === "string" ? detail : JSON.stringify(detail));
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function decode(res: Response): Promise<unknown> {
  const text = await res.text();
  try {
    return text ? JSON.parse(text) : null;
  } catch {
    return text;
  }
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    readonly adminToken: string | null = null,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private headers(extra: Record<string, string> = {}): Record<string, string> {
    const headers: Record<string, string> = { ...extra };
    if (this.adminToken !== null) {
      headers["X-Admin-Token"] = this.adminToken;
    }
    return headers;
  }

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const body = await decode(res);
    if (!res.ok) {
      const detail =
        body !== null && typeof body === "object" && "detail" in body
          ? (body as { detail: unknown }).detail
          : body;
      throw new ApiError(res.status, detail);
    }
    return body;
  }

  private getJson(path: string): Promise<unknown> {
    return this.request(path, { headers: this.headers() });
  }

  private postJson(path: string, body?: unknown): Promise<unknown> {
    return this.request(path, {
      method: "POST",
      headers: this.headers({ "content-type": "application/json" }),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
  }

  async health(): Promise<{ status: string; sessions: number }> {
    return (await this.getJson("/health")) as { status: string; sessions: number };
  }

  async listSessions(): Promise<SessionDTO[]> {
    const doc = (await this.getJson("/sessions")) as { sessions: SessionDTO[] };
    return doc.sessions;
  }

  async getSession(sessionId: string): Promise<SessionDTO> {
    return (await this.getJson(`/sessions/${sessionId}`)) as SessionDTO;
  }

  async sessionAction(
    sessionId: string,
    action: "terminate" | "disable" | "reenable",
    params: Record<string, string> = {},
  ): Promise<SessionDTO> {
    const doc = (await this.postJson(`/sessions/${sessionId}/${action}`, params)) as {
      session: SessionDTO;
    };
    return doc.session;
  }

  async requestAccess(body: AccessRequestBody): Promise<AccessResponse> {
    return (await this.postJson("/access-requests", body)) as AccessResponse;
  }

  async registerGuest(
    body: GuestRegistrationBody,
  ): Promise<{ user_id: string; token: string; roles: string[] }> {
    return (await this.postJson("/portal/register", body)) as {
      user_id: string;
      token: string;
      roles: string[];
    };
  }

  async remediate(
    sessionId: string,
    checkId: string,
  ): Promise<{ result: { applied: boolean }; session: SessionDTO }> {
    return (await this.postJson(`/portal/remediate/${sessionId}/${checkId}`)) as {
      result: { applied: boolean };
      session: SessionDTO;
    };
  }

  async getFirewallPolicy(): Promise<string> {
    const res = await this.fetchImpl(`${this.baseUrl}/policies/firewall`, {
      headers: this.headers(),
    });
    if (!res.ok) {
      throw new ApiError(res.status, await decode(res));
    }
    return await res.text();
  }

  async putFirewallPolicy(document: string): Promise<{ applied: boolean; rules: number }> {
    return (await this.request("/policies/firewall", {
      method: "PUT",
      headers: this.headers({ "content-type": "text/plain" }),
      body: document,
    })) as { applied: boolean; rules: number };
  }

  async getThreatPolicy(): Promise<unknown> {
    return this.getJson("/policies/threat");
  }

  async putThreatPolicy(policy: unknown): Promise<{ applied: boolean }> {
    return (await this.request("/policies/threat", {
      method: "PUT",
      headers: this.headers({ "content-type": "application/json" }),
      body: JSON.stringify(policy),
    })) as { applied: boolean };
  }

  async audit(since = 0): Promise<unknown[]> {
    const doc = (await this.getJson(`/audit?since=${since}`)) as { records: unknown[] };
    return doc.records;
  }
}
