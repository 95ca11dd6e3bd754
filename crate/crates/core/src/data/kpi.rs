//! Financial ratios derived from balance-sheet fields.
//!
//! Every ratio whose operand is missing or whose denominator is zero comes out
//! missing (`None`); no ratio ever produces an infinity.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{is_missing, Column, Dataset};
use crate::error::{Error, Result};

/// KPI names in output column order.
pub const KPI_NAMES: [&str; 21] = [
    "ACID",
    "ACTIVITY",
    "AGE",
    "ASSET_TURNOVER",
    "CURRENT_RATIO",
    "DEBT_COVERAGE",
    "DEBT_EQUITY",
    "EBITDA_RATIO",
    "FFO",
    "IND_ROTA",
    "IND_STRUTT",
    "INVENTORY_TURNOVER",
    "LEVERAGE_1",
    "LEVERAGE_2",
    "LONG-TERM-DEBT_EQUITY",
    "NETINCOME_RATIO",
    "PFN",
    "ROA",
    "ROE",
    "ROI",
    "SHORT-TERM-DEBT_EQUITY",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BalanceSheetRow {
    pub cash_and_marketable_securities: Option<f64>,
    pub total_accounts_receivable: Option<f64>,
    pub total_current_liabilities: Option<f64>,
    pub total_sales: Option<f64>,
    pub total_current_assets: Option<f64>,
    pub ebitda: Option<f64>,
    pub total_interest_expense: Option<f64>,
    pub total_liabilities: Option<f64>,
    pub net_worth: Option<f64>,
    pub net_income: Option<f64>,
    // spelled as in the source data dictionary
    pub total_amortization_and_depreciaton: Option<f64>,
    pub depreciation_expense: Option<f64>,
    pub working_capital: Option<f64>,
    pub total_inventory: Option<f64>,
    pub total_long_term_debt: Option<f64>,
    pub long_term_debt_current_maturities: Option<f64>,
    pub total_operating_profit: Option<f64>,
    pub total_assets: Option<f64>,
    pub financial_statement_date: Option<NaiveDate>,
    pub incorporation_date: Option<NaiveDate>,
}

/// Source column names, as they appear in input files.
pub const BALANCE_SHEET_FIELDS: [&str; 18] = [
    "cashAndMarketableSecurities",
    "totalAccountsReceivable",
    "totalCurrentLiabilities",
    "totalSales",
    "totalCurrentAssets",
    "ebitda",
    "totalInterestExpense",
    "totalLiabilities",
    "netWorth",
    "netIncome",
    "totalAmortizationAndDepreciaton",
    "depreciationExpense",
    "workingCapital",
    "totalInventory",
    "totalLongTermDebt",
    "longTermDebtCurrentMaturities",
    "totalOperatingProfit",
    "totalAssets",
];

pub const STATEMENT_DATE: &str = "financialStatementDate";
pub const INCORPORATION_DATE: &str = "incorporationDate";

impl BalanceSheetRow {
    pub fn validate(&self) -> Result<()> {
        if let (Some(fsd), Some(inc)) = (self.financial_statement_date, self.incorporation_date) {
            if fsd < inc {
                return Err(Error::InvalidArgument(format!(
                    "statement date {fsd} precedes incorporation date {inc}"
                )));
            }
        }
        Ok(())
    }

    fn field_mut(&mut self, name: &str) -> Option<&mut Option<f64>> {
        Some(match name {
            "cashAndMarketableSecurities" => &mut self.cash_and_marketable_securities,
            "totalAccountsReceivable" => &mut self.total_accounts_receivable,
            "totalCurrentLiabilities" => &mut self.total_current_liabilities,
            "totalSales" => &mut self.total_sales,
            "totalCurrentAssets" => &mut self.total_current_assets,
            "ebitda" => &mut self.ebitda,
            "totalInterestExpense" => &mut self.total_interest_expense,
            "totalLiabilities" => &mut self.total_liabilities,
            "netWorth" => &mut self.net_worth,
            "netIncome" => &mut self.net_income,
            "totalAmortizationAndDepreciaton" => &mut self.total_amortization_and_depreciaton,
            "depreciationExpense" => &mut self.depreciation_expense,
            "workingCapital" => &mut self.working_capital,
            "totalInventory" => &mut self.total_inventory,
            "totalLongTermDebt" => &mut self.total_long_term_debt,
            "longTermDebtCurrentMaturities" => &mut self.long_term_debt_current_maturities,
            "totalOperatingProfit" => &mut self.total_operating_profit,
            "totalAssets" => &mut self.total_assets,
            _ => return None,
        })
    }

    /// Read row `i` of `ds`, taking each field from the column of the same
    /// name; absent columns leave the field missing.
    pub fn from_dataset(ds: &Dataset, i: usize) -> Self {
        let mut row = Self::default();
        for name in BALANCE_SHEET_FIELDS {
            if let Some(j) = ds.column_index(name) {
                let v = ds.get(i, j);
                *row.field_mut(name).expect("known field") = (!is_missing(v)).then_some(v);
            }
        }
        row.financial_statement_date = ds.dates(STATEMENT_DATE).and_then(|d| d[i]);
        row.incorporation_date = ds.dates(INCORPORATION_DATE).and_then(|d| d[i]);
        row
    }
}

fn div(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b != 0.0 => Some(a / b),
        _ => None,
    }
}

fn add(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? + b?)
}

/// All KPIs for one row; missing propagates.
pub fn compute_kpis(row: &BalanceSheetRow) -> BTreeMap<&'static str, Option<f64>> {
    let r = row;
    let pfn = add(r.total_long_term_debt, r.long_term_debt_current_maturities)
        .zip(r.cash_and_marketable_securities)
        .map(|(a, c)| a - c);
    let ffo = add(
        add(r.net_income, r.total_amortization_and_depreciaton),
        r.depreciation_expense,
    );
    let age = match (r.financial_statement_date, r.incorporation_date) {
        (Some(f), Some(i)) => Some((f - i).num_days() as f64 / 365.0),
        _ => None,
    };
    let values = [
        div(
            add(r.cash_and_marketable_securities, r.total_accounts_receivable),
            r.total_current_liabilities,
        ),
        div(r.total_current_liabilities, r.total_sales),
        age,
        div(r.total_sales, r.total_assets),
        div(r.total_current_assets, r.total_current_liabilities),
        div(r.ebitda, r.total_interest_expense),
        div(r.total_liabilities, r.net_worth),
        div(r.ebitda, r.total_sales),
        ffo,
        div(r.working_capital, r.total_sales),
        div(pfn, r.net_worth),
        div(r.total_inventory, r.total_sales),
        div(pfn, r.ebitda),
        div(ffo, pfn),
        div(r.total_long_term_debt, r.net_worth),
        div(r.net_income, r.total_sales),
        pfn,
        div(r.net_income, r.total_assets),
        div(r.net_income, r.net_worth),
        div(r.total_operating_profit, r.total_assets),
        div(r.total_current_liabilities, r.net_worth),
    ];
    KPI_NAMES.iter().copied().zip(values).collect()
}

/// Append one numeric column per KPI, computed from same-named source columns.
pub fn append_kpi_columns(ds: &Dataset) -> Result<Dataset> {
    let per_row: Vec<_> = (0..ds.n_rows())
        .map(|i| compute_kpis(&BalanceSheetRow::from_dataset(ds, i)))
        .collect();
    let mut out = ds.clone();
    for name in KPI_NAMES {
        let values = per_row
            .iter()
            .map(|m| m[name].unwrap_or(super::MISSING))
            .collect();
        out.set_column(Column::numeric(name, values))?;
    }
    Ok(out)
}
