import { describe, expect, it } from "vitest";

import { LEGAL_ACTIONS, availableActions } from "../src/actions.js";

describe("legal action table", () => {
  it("covers every lifecycle state", () => {
    expect(Object.keys(LEGAL_ACTIONS).sort()).toEqual(
      ["Active", "Disabled", "Pending", "Quarantined", "Terminated"].sort(),
    );
  });

  it("offers re-enable only for Disabled", () => {
    for (const [state, actions] of Object.entries(LEGAL_ACTIONS)) {
      expect(actions.includes("reenable")).toBe(state === "Disabled");
    }
  });

  it("offers nothing on Terminated", () => {
    expect(availableActions("Terminated")).toEqual([]);
  });

  it("is defensive about unknown states", () => {
    expect(availableActions("Bogus")).toEqual([]);
  });
});
